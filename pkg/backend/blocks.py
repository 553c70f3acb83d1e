"""
Blocos arquiteturais da família SChanger.

Todos os blocos são ``nn.Module`` cujos forwards chamam apenas os operadores
de ``tensor_ops``. Os nomes dos submódulos formam os caminhos de parâmetros
dos checkpoints (ex.: ``encoder.stage3.lfem1.expand.weight``), por isso o
SCAM reutiliza exatamente os nomes do VANM e acrescenta apenas ``tfm``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import reduce
from typing import List, Optional, Sequence, Tuple

import torch
from torch import nn

import tensor_ops as ops
from errors import ConfigError, DimensionError


FUSION_KINDS = ('tfm_ln', 'tfm_bn', 'add', 'absdiff')


# ==================== CAMADAS BÁSICAS ====================

class Conv(nn.Module):
    """Convolução 2D com bias; forward via ``tensor_ops.conv2d``."""

    def __init__(self, in_ch: int, out_ch: int, kernel_size: int = 1, stride: int = 1,
                 padding: Optional[int] = None, dilation: int = 1, groups: int = 1, bias: bool = True):
        super().__init__()
        if in_ch % groups or out_ch % groups:
            raise DimensionError('Conv', f'canais divisíveis por groups={groups}', (in_ch, out_ch))
        self.in_ch = in_ch
        self.out_ch = out_ch
        self.kernel_size = kernel_size
        self.stride = stride
        self.padding = dilation * (kernel_size - 1) // 2 if padding is None else padding
        self.dilation = dilation
        self.groups = groups
        self.weight = nn.Parameter(torch.empty(out_ch, in_ch // groups, kernel_size, kernel_size))
        self.bias = nn.Parameter(torch.zeros(out_ch)) if bias else None
        self.reset_parameters()

    def reset_parameters(self) -> None:
        # Normal com desvio sqrt(2 / fan_out)
        fan_out = self.kernel_size * self.kernel_size * self.out_ch // self.groups
        nn.init.normal_(self.weight, 0.0, math.sqrt(2.0 / fan_out))
        if self.bias is not None:
            nn.init.zeros_(self.bias)

    def params(self) -> ops.ConvParams:
        return ops.ConvParams(self.weight, self.bias, self.stride, self.padding, self.dilation, self.groups)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return ops.conv2d(x, self.params())

    def extra_repr(self) -> str:
        return (f"{self.in_ch}, {self.out_ch}, k={self.kernel_size}, d={self.dilation}, "
                f"groups={self.groups}, bias={self.bias is not None}")


class Norm(nn.Module):
    """Normalização em lote (com estatísticas correntes) ou por posição."""

    def __init__(self, channels: int, kind: str = 'batch', eps: float = ops.DEFAULT_EPS,
                 momentum: float = ops.DEFAULT_MOMENTUM):
        super().__init__()
        if kind not in ops.NORM_KINDS:
            raise ConfigError(f"Tipo de normalização inválido: {kind}")
        self.channels = channels
        self.kind = kind
        self.eps = eps
        self.momentum = momentum
        self.weight = nn.Parameter(torch.ones(channels))
        self.bias = nn.Parameter(torch.zeros(channels))
        if kind == 'batch':
            self.register_buffer('running_mean', torch.zeros(channels))
            self.register_buffer('running_var', torch.ones(channels))
        else:
            self.running_mean = None
            self.running_var = None

    def reset_parameters(self) -> None:
        nn.init.ones_(self.weight)
        nn.init.zeros_(self.bias)

    def params(self) -> ops.NormParams:
        return ops.NormParams(self.weight, self.bias, self.running_mean, self.running_var,
                              self.eps, self.momentum)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return ops.normalize(x, self.params(), self.kind, self.training)

    def extra_repr(self) -> str:
        return f"{self.channels}, kind={self.kind}"


class DropPath(nn.Module):
    """Descarte estocástico do ramo residual; taxa 1.0 zera o ramo em treino."""

    def __init__(self, rate: float = 0.0):
        super().__init__()
        if not 0.0 <= rate <= 1.0:
            raise ConfigError(f"Taxa de droppath fora de [0, 1]: {rate}")
        self.rate = rate
        self.generator: Optional[torch.Generator] = None

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if self.training and self.rate >= 1.0:
            return torch.zeros_like(x)
        return ops.droppath(x, self.rate, self.training, self.generator)


# ==================== BLOCOS ====================

@dataclass
class LfemConfig:
    """Configuração de um LFEM (gargalo invertido com SE)."""

    in_ch: int
    out_ch: int
    expansion: int = 6
    se_ratio: float = 0.25
    droppath_rate: float = 0.0

    @property
    def hidden_ch(self) -> int:
        return self.expansion * self.in_ch

    @property
    def se_ch(self) -> int:
        return max(1, int(self.se_ratio * self.in_ch + 0.5))

    @property
    def has_residual(self) -> bool:
        return self.in_ch == self.out_ch


@dataclass
class SclkaConfig:
    """Decomposição do kernel grande: dw k1, dw k2 com dilatação d, pontual."""

    channels: int
    k1: int = 5
    k2: int = 7
    d: int = 3

    @property
    def radius(self) -> int:
        return (self.k1 - 1) // 2 + self.d * (self.k2 - 1) // 2


class SqueezeExcite(nn.Module):
    """Reponderação por canal: GAP -> 1x1 -> SiLU -> 1x1 -> sigmoid -> gate."""

    def __init__(self, channels: int, squeeze_ch: int):
        super().__init__()
        self.channels = channels
        self.reduce = Conv(channels, squeeze_ch, 1)
        self.expand = Conv(squeeze_ch, channels, 1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[1] != self.channels:
            raise DimensionError('se_forward', f'{self.channels} canais', f'{x.shape[1]} canais')
        s = ops.global_avg_pool(x)
        s = ops.activation(self.reduce(s), 'silu')
        gate = ops.activation(self.expand(s), 'sigmoid')
        return ops.elementwise(x, gate.expand_as(x), 'mul')


class LFEM(nn.Module):
    """
    Bloco de extração de características locais (MBConv).

    F_e = SiLU(BN(expand(x))); F_f = SE(SiLU(BN(dw3x3(F_e))));
    y = BN(project(F_f)) e, se in_ch == out_ch, y = droppath(y) + x.
    """

    def __init__(self, cfg: LfemConfig):
        super().__init__()
        self.cfg = cfg
        h = cfg.hidden_ch
        self.expand = Conv(cfg.in_ch, h, 1)
        self.norm1 = Norm(h)
        self.dw = Conv(h, h, 3, groups=h)
        self.norm2 = Norm(h)
        self.se = SqueezeExcite(h, cfg.se_ch)
        self.project = Conv(h, cfg.out_ch, 1)
        self.norm3 = Norm(cfg.out_ch)
        self.drop_path = DropPath(cfg.droppath_rate) if cfg.has_residual else None

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[1] != self.cfg.in_ch:
            raise DimensionError('lfem_forward', f'{self.cfg.in_ch} canais', f'{x.shape[1]} canais')
        f = ops.activation(self.norm1(self.expand(x)), 'silu')
        f = ops.activation(self.norm2(self.dw(f)), 'silu')
        f = self.se(f)
        y = self.norm3(self.project(f))
        if self.drop_path is not None:
            y = ops.elementwise(self.drop_path(y), x, 'add')
        return y


class TemporalFusion(nn.Module):
    """
    TFM: concat(x1, x2) -> 1x1 (2C -> C) -> LN -> GELU.

    ``kind`` seleciona a estratégia de fusão: ``tfm_ln`` (padrão),
    ``tfm_bn`` (normalização em lote), ``add`` e ``absdiff`` (sem parâmetros).
    """

    def __init__(self, channels: int, kind: str = 'tfm_ln'):
        super().__init__()
        if kind not in FUSION_KINDS:
            raise ConfigError(f"Estratégia de fusão inválida: {kind}")
        self.channels = channels
        self.kind = kind
        if kind.startswith('tfm'):
            self.reduce = Conv(2 * channels, channels, 1)
            self.norm = Norm(channels, 'layer' if kind == 'tfm_ln' else 'batch')
            self.reset_parameters()

    def reset_parameters(self) -> None:
        if not self.kind.startswith('tfm'):
            return
        nn.init.trunc_normal_(self.reduce.weight, std=0.02)
        nn.init.zeros_(self.reduce.bias)
        self.norm.reset_parameters()

    def forward(self, x1: torch.Tensor, x2: torch.Tensor) -> torch.Tensor:
        if x1.shape != x2.shape:
            raise DimensionError('tfm_forward', tuple(x1.shape), tuple(x2.shape))
        if self.kind == 'add':
            return ops.elementwise(x1, x2, 'add')
        if self.kind == 'absdiff':
            return torch.abs(ops.elementwise(x1, x2, 'sub'))
        x_m = ops.concat_channels(x1, x2)
        x_s = self.reduce(x_m)
        return ops.activation(self.norm(x_s), 'gelu')


class LargeKernelAttention(nn.Module):
    """Mapa de atenção: pw(dw_dilated(dw(t)))."""

    def __init__(self, cfg: SclkaConfig):
        super().__init__()
        self.cfg = cfg
        c = cfg.channels
        self.dw = Conv(c, c, cfg.k1, groups=c)
        self.dwd = Conv(c, c, cfg.k2, dilation=cfg.d, groups=c)
        self.pw = Conv(c, c, 1)

    def attention_map(self, t: torch.Tensor) -> torch.Tensor:
        return self.pw(self.dwd(self.dw(t)))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return ops.elementwise(self.attention_map(x), x, 'mul')


def sclka_forward(x1: torch.Tensor, x2: torch.Tensor, tfm: TemporalFusion,
                  lka: LargeKernelAttention) -> Tuple[torch.Tensor, torch.Tensor]:
    """Atenção compartilhada: um único mapa de T = TFM(x1, x2) multiplica os dois fluxos."""
    if x1.shape != x2.shape:
        raise DimensionError('sclka_forward', tuple(x1.shape), tuple(x2.shape))
    t = tfm(x1, x2)
    attn = lka.attention_map(t)
    return ops.elementwise(attn, x1, 'mul'), ops.elementwise(attn, x2, 'mul')


class SCLKA(nn.Module):
    """SCLKA isolado (TFM + atenção de kernel grande)."""

    def __init__(self, cfg: SclkaConfig, fusion: str = 'tfm_ln'):
        super().__init__()
        self.cfg = cfg
        self.tfm = TemporalFusion(cfg.channels, fusion)
        self.lka = LargeKernelAttention(cfg)

    def attention_map(self, x1: torch.Tensor, x2: torch.Tensor) -> torch.Tensor:
        return self.lka.attention_map(self.tfm(x1, x2))

    def forward(self, x1: torch.Tensor, x2: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        return sclka_forward(x1, x2, self.tfm, self.lka)


class ConvFFN(nn.Module):
    """MLP convolucional: 1x1 (C -> rC) -> dw3x3 -> GELU -> 1x1 (rC -> C)."""

    def __init__(self, channels: int, ratio: int = 4):
        super().__init__()
        hidden = ratio * channels
        self.fc1 = Conv(channels, hidden, 1)
        self.dw = Conv(hidden, hidden, 3, groups=hidden)
        self.fc2 = Conv(hidden, channels, 1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.fc2(ops.activation(self.dw(self.fc1(x)), 'gelu'))


class VANM(nn.Module):
    """
    Módulo de atenção visual de fluxo único.

    x = x + proj2(LKA(GELU(proj1(BN(x))))); x = x + FFN(BN(x)).
    """

    def __init__(self, channels: int, ffn_ratio: int = 4, sclka: Optional[SclkaConfig] = None):
        super().__init__()
        self.channels = channels
        cfg = sclka or SclkaConfig(channels)
        self.norm1 = Norm(channels)
        self.proj1 = Conv(channels, channels, 1)
        self.lka = LargeKernelAttention(cfg)
        self.proj2 = Conv(channels, channels, 1)
        self.norm2 = Norm(channels)
        self.ffn = ConvFFN(channels, ffn_ratio)

    def _check(self, x: torch.Tensor, op: str) -> None:
        if x.dim() != 4 or x.shape[1] != self.channels:
            raise DimensionError(op, f'{self.channels} canais', tuple(x.shape))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        self._check(x, 'vanm_forward')
        u = ops.activation(self.proj1(self.norm1(x)), 'gelu')
        u = self.lka(u)
        x = ops.elementwise(x, self.proj2(u), 'add')
        return ops.elementwise(x, self.ffn(self.norm2(x)), 'add')


class SCAM(VANM):
    """
    Módulo de atenção com consistência espacial (dois fluxos).

    As camadas por fluxo rodam sobre o lote concatenado dos dois fluxos, de
    modo que pesos e estatísticas de BN são compartilhados; o mapa de atenção
    vem de TFM(u1, u2) e multiplica ambos os fluxos.
    """

    def __init__(self, channels: int, ffn_ratio: int = 4, sclka: Optional[SclkaConfig] = None,
                 fusion: str = 'tfm_ln'):
        super().__init__(channels, ffn_ratio, sclka)
        self.tfm = TemporalFusion(channels, fusion)

    def forward(self, x1: torch.Tensor, x2: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        if x1.shape != x2.shape:
            raise DimensionError('scam_forward', tuple(x1.shape), tuple(x2.shape))
        self._check(x1, 'scam_forward')
        n = x1.shape[0]
        x = torch.cat([x1, x2], dim=0)
        u = ops.activation(self.proj1(self.norm1(x)), 'gelu')
        a1, a2 = sclka_forward(u[:n], u[n:], self.tfm, self.lka)
        x = ops.elementwise(x, self.proj2(torch.cat([a1, a2], dim=0)), 'add')
        x = ops.elementwise(x, self.ffn(self.norm2(x)), 'add')
        return x[:n], x[n:]


class Stem(nn.Module):
    """Conv 3x3 (3 -> C0) + BN + SiLU, resolução preservada."""

    def __init__(self, out_ch: int, in_ch: int = 3):
        super().__init__()
        self.in_ch = in_ch
        self.conv = Conv(in_ch, out_ch, 3)
        self.norm = Norm(out_ch)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.dim() != 4 or x.shape[1] != self.in_ch:
            raise DimensionError('stem_forward', f'imagem RGB com {self.in_ch} canais', tuple(x.shape))
        return ops.activation(self.norm(self.conv(x)), 'silu')


class MSFSH(nn.Module):
    """
    Cabeça de supervisão multiescala.

    Uma conv 3x3 (C_s -> 1) por estágio, redimensionada por interpolação
    bilinear para a resolução cheia; a saída fundida é uma conv 1x1 sobre a
    concatenação das cinco laterais. Retorna [lateral1..lateral5, fundida].
    """

    def __init__(self, widths: Sequence[int]):
        super().__init__()
        if len(widths) != 5:
            raise ConfigError(f"MSFSH exige 5 larguras de estágio (recebidas {len(widths)})")
        self.widths = tuple(widths)
        self.sides = nn.ModuleDict({f"side{i + 1}": Conv(w, 1, 3) for i, w in enumerate(widths)})
        self.fuse = Conv(5, 1, 1)

    def forward(self, feats: Sequence[torch.Tensor], full_size: Tuple[int, int]) -> List[torch.Tensor]:
        if len(feats) != 5:
            raise DimensionError('msfsh_forward', '5 mapas de características', len(feats))
        sides = []
        for i, f in enumerate(feats):
            logit = self.sides[f"side{i + 1}"](f)
            if tuple(logit.shape[2:]) != tuple(full_size):
                logit = ops.resample(logit, 'bilinear', full_size)
            sides.append(logit)
        fused = self.fuse(reduce(ops.concat_channels, sides))
        return sides + [fused]
