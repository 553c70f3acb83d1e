"""
Operadores primitivos diferenciáveis usados por todos os blocos da rede.

Cada operador delega o cálculo ao PyTorch (forward e backward via autograd)
e acrescenta a validação de formas e de valores não finitos que o restante
do toolkit espera. Tensores seguem o layout (batch, canais, altura, largura)
em float32; o verificador de gradientes trabalha internamente em float64.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Tuple

import torch
import torch.nn.functional as F

from errors import ConfigError, DimensionError, NumericError


ACTIVATIONS = ('gelu', 'silu', 'sigmoid')
NORM_KINDS = ('batch', 'layer')
RESAMPLE_MODES = ('maxpool2', 'bilinear')
ELEMENTWISE_KINDS = ('add', 'mul', 'sub')

DEFAULT_EPS = 1e-5
DEFAULT_MOMENTUM = 0.1

# Verificação de NaN/Inf nas entradas de cada operador
_strict_numerics = True


def set_strict_numerics(enabled: bool) -> None:
    """Liga/desliga a verificação de valores finitos nas entradas."""
    global _strict_numerics
    _strict_numerics = bool(enabled)


def strict_numerics() -> bool:
    return _strict_numerics


@dataclass
class ConvParams:
    """Pesos e hiperparâmetros de uma convolução 2D."""

    weight: torch.Tensor
    bias: Optional[torch.Tensor] = None
    stride: int = 1
    padding: int = 0
    dilation: int = 1
    groups: int = 1

    def __post_init__(self):
        if self.weight.dim() != 4:
            raise DimensionError('ConvParams', 'peso de rank 4', tuple(self.weight.shape))
        for name in ('stride', 'dilation', 'groups'):
            if getattr(self, name) < 1:
                raise ConfigError(f"ConvParams.{name} deve ser positivo")
        if self.padding < 0:
            raise ConfigError("ConvParams.padding não pode ser negativo")
        if self.out_ch % self.groups != 0:
            raise DimensionError('ConvParams', f'out_ch divisível por groups={self.groups}', self.out_ch)
        if self.bias is not None and tuple(self.bias.shape) != (self.out_ch,):
            raise DimensionError('ConvParams', (self.out_ch,), tuple(self.bias.shape), 'bias')

    @property
    def out_ch(self) -> int:
        return int(self.weight.shape[0])

    @property
    def in_ch(self) -> int:
        return int(self.weight.shape[1]) * self.groups

    @property
    def kernel_size(self) -> Tuple[int, int]:
        return int(self.weight.shape[2]), int(self.weight.shape[3])

    @property
    def is_depthwise(self) -> bool:
        return self.groups == self.in_ch == self.out_ch


@dataclass
class NormParams:
    """Parâmetros afins e estatísticas de uma normalização."""

    gamma: torch.Tensor
    beta: torch.Tensor
    running_mean: Optional[torch.Tensor] = None
    running_var: Optional[torch.Tensor] = None
    eps: float = DEFAULT_EPS
    momentum: float = DEFAULT_MOMENTUM

    def __post_init__(self):
        if not self.eps > 0:
            raise ConfigError(f"eps deve ser positivo (recebido {self.eps})")
        if not 0.0 <= self.momentum <= 1.0:
            raise ConfigError(f"momentum deve estar em [0, 1] (recebido {self.momentum})")
        if self.gamma.shape != self.beta.shape:
            raise DimensionError('NormParams', tuple(self.gamma.shape), tuple(self.beta.shape), 'beta')

    @property
    def channels(self) -> int:
        return int(self.gamma.numel())


def _check_rank4(x: torch.Tensor, op: str) -> None:
    if x.dim() != 4:
        raise DimensionError(op, 'tensor (batch, canais, altura, largura)', tuple(x.shape))


def _check_finite(x: torch.Tensor, op: str) -> None:
    if _strict_numerics and not bool(torch.isfinite(x).all()):
        raise NumericError(f"{op}: entrada contém NaN/Inf")


def _check_same_shape(a: torch.Tensor, b: torch.Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise DimensionError(op, tuple(a.shape), tuple(b.shape))


def conv_output_size(size: int, kernel: int, stride: int, padding: int, dilation: int) -> int:
    """Fórmula padrão do tamanho de saída de uma convolução."""
    return (size + 2 * padding - dilation * (kernel - 1) - 1) // stride + 1


def conv2d(x: torch.Tensor, p: ConvParams) -> torch.Tensor:
    """
    Convolução 2D com suporte a grupos e dilatação.

    Args:
        x: Tensor (N, C_in, H, W)
        p: Pesos e hiperparâmetros

    Returns:
        Tensor (N, C_out, H_out, W_out)

    Raises:
        DimensionError: canais incompatíveis ou kernel maior que a entrada
        NumericError: entrada com NaN/Inf
    """
    _check_rank4(x, 'conv2d')
    if x.shape[1] != p.in_ch:
        raise DimensionError('conv2d', f'{p.in_ch} canais', f'{x.shape[1]} canais')

    kh, kw = p.kernel_size
    for size, k in ((x.shape[2], kh), (x.shape[3], kw)):
        if size + 2 * p.padding < p.dilation * (k - 1) + 1:
            raise DimensionError('conv2d', f'entrada preenchida >= kernel efetivo {p.dilation * (k - 1) + 1}',
                                 size + 2 * p.padding)

    _check_finite(x, 'conv2d')
    return F.conv2d(x, p.weight, p.bias, p.stride, p.padding, p.dilation, p.groups)


def normalize(x: torch.Tensor, p: NormParams, kind: str = 'batch', training: bool = False) -> torch.Tensor:
    """
    Normalização em lote ou por posição (layer norm convolucional).

    - ``batch``: estatísticas sobre (N, H, W) por canal; em treino as
      estatísticas correntes são atualizadas no próprio ``NormParams``.
    - ``layer``: estatísticas sobre o eixo de canais em cada (n, h, w).

    A transformação afim é aplicada por último.
    """
    _check_rank4(x, 'normalize')
    if kind not in NORM_KINDS:
        raise ConfigError(f"Tipo de normalização inválido: {kind}")
    if p.channels != x.shape[1]:
        raise DimensionError('normalize', f'{p.channels} canais', f'{x.shape[1]} canais')
    _check_finite(x, 'normalize')

    if kind == 'batch':
        if not training and (p.running_mean is None or p.running_var is None):
            raise ConfigError("normalize(batch) em avaliação exige estatísticas correntes")
        return F.batch_norm(x, p.running_mean, p.running_var, p.gamma, p.beta,
                            training, p.momentum, p.eps)

    mean = x.mean(dim=1, keepdim=True)
    var = (x - mean).pow(2).mean(dim=1, keepdim=True)
    y = (x - mean) / torch.sqrt(var + p.eps)
    return y * p.gamma.view(1, -1, 1, 1) + p.beta.view(1, -1, 1, 1)


def activation(x: torch.Tensor, kind: str) -> torch.Tensor:
    """Ativações elemento a elemento; GELU na forma exata (erf)."""
    if kind == 'gelu':
        return F.gelu(x)
    if kind == 'silu':
        return F.silu(x)
    if kind == 'sigmoid':
        return torch.sigmoid(x)
    raise ConfigError(f"Ativação desconhecida: {kind}")


def resample(x: torch.Tensor, mode: str, target: Optional[Tuple[int, int]] = None) -> torch.Tensor:
    """
    Reamostragem espacial.

    ``maxpool2`` reduz pela metade com janelas 2x2 (dimensões ímpares são
    proibidas); ``bilinear`` usa align_corners=False (centros de meio pixel).
    """
    _check_rank4(x, 'resample')
    if mode == 'maxpool2':
        h, w = x.shape[2], x.shape[3]
        if h % 2 or w % 2:
            raise DimensionError('resample(maxpool2)', 'dimensões espaciais pares', (h, w))
        return F.max_pool2d(x, kernel_size=2, stride=2)

    if mode == 'bilinear':
        if target is None or len(target) != 2 or min(target) < 1:
            raise DimensionError('resample(bilinear)', 'alvo (h, w) >= 1', target)
        return F.interpolate(x, size=(int(target[0]), int(target[1])), mode='bilinear', align_corners=False)

    raise ConfigError(f"Modo de reamostragem desconhecido: {mode}")


def elementwise(a: torch.Tensor, b: torch.Tensor, kind: str) -> torch.Tensor:
    """Soma, produto ou diferença elemento a elemento entre tensores de mesma forma."""
    _check_same_shape(a, b, f'elementwise({kind})')
    if kind == 'add':
        return a + b
    if kind == 'mul':
        return a * b
    if kind == 'sub':
        return a - b
    raise ConfigError(f"Operação elemento a elemento desconhecida: {kind}")


def concat_channels(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Concatena no eixo de canais, com ``a`` ocupando os primeiros índices."""
    _check_rank4(a, 'concat_channels')
    _check_rank4(b, 'concat_channels')
    if a.shape[0] != b.shape[0] or a.shape[2:] != b.shape[2:]:
        raise DimensionError('concat_channels', (a.shape[0], *a.shape[2:]), (b.shape[0], *b.shape[2:]))
    return torch.cat([a, b], dim=1)


def droppath(x: torch.Tensor, rate: float, training: bool,
             generator: Optional[torch.Generator] = None) -> torch.Tensor:
    """
    Profundidade estocástica por amostra.

    Em treino cada amostra do lote é mantida com probabilidade 1 - rate e
    os sobreviventes são escalados por 1/(1 - rate).
    """
    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"Taxa de droppath fora de [0, 1): {rate}")
    if not training or rate == 0.0:
        return x

    keep = 1.0 - rate
    shape = (x.shape[0],) + (1,) * (x.dim() - 1)
    mask = torch.empty(shape, dtype=x.dtype, device=x.device).bernoulli_(keep, generator=generator)
    return x * mask / keep


def global_avg_pool(x: torch.Tensor) -> torch.Tensor:
    """Média espacial por canal; saída (N, C, 1, 1)."""
    _check_rank4(x, 'global_avg_pool')
    if x.shape[2] < 1 or x.shape[3] < 1:
        raise DimensionError('global_avg_pool', 'altura e largura >= 1', tuple(x.shape[2:]))
    return x.mean(dim=(2, 3), keepdim=True)


def grad_check(fn: Callable[..., torch.Tensor], inputs: Sequence[torch.Tensor],
               eps: float = 1e-3, dtype: torch.dtype = torch.float64) -> float:
    """
    Compara o gradiente analítico com diferenças finitas centrais.

    Args:
        fn: Função que recebe os tensores de entrada e devolve uma loss escalar
        inputs: Tensores pequenos (até algumas centenas de elementos)
        eps: Passo das diferenças finitas
        dtype: Precisão usada internamente

    Returns:
        Maior erro relativo, com denominador max(|analítico|, |numérico|, 1e-8)

    Raises:
        NumericError: valor intermediário não finito
    """
    xs = [t.detach().to(dtype).clone().requires_grad_(True) for t in inputs]

    out = fn(*xs)
    if out.numel() != 1:
        raise DimensionError('grad_check', 'saída escalar', tuple(out.shape))
    if not bool(torch.isfinite(out)):
        raise NumericError("grad_check: loss não finita")

    grads = torch.autograd.grad(out, xs, allow_unused=True)

    worst = 0.0
    with torch.no_grad():
        for x, g in zip(xs, grads):
            analytic = torch.zeros_like(x) if g is None else g
            flat = x.view(-1)
            flat_g = analytic.reshape(-1)
            for i in range(flat.numel()):
                orig = flat[i].item()
                flat[i] = orig + eps
                f_plus = float(fn(*xs))
                flat[i] = orig - eps
                f_minus = float(fn(*xs))
                flat[i] = orig

                if not (math.isfinite(f_plus) and math.isfinite(f_minus)):
                    raise NumericError(f"grad_check: avaliação não finita no elemento {i}")

                numeric = (f_plus - f_minus) / (2.0 * eps)
                a = flat_g[i].item()
                err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
                worst = max(worst, err)

    return worst
