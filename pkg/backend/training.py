"""
Otimização com supervisão profunda.

- Loss BCE + Dice (soft, por amostra) somada sobre as seis cabeças;
- Pesos sombra EMA atualizados a cada passo;
- Cronograma cosseno com aquecimento linear;
- Aumento de dados pareado (geometria idêntica nas imagens e na máscara,
  fotometria por imagem, troca temporal);
- Laço de treino AdamW determinístico por semente.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
import torch
import torch.nn.functional as F
import torchvision.transforms.functional as TF
from torch.utils.data import DataLoader, Dataset
from torchvision.transforms import InterpolationMode

from data_io import Checkpoint, SamplePair, SegSample, normalize_image
from errors import CheckpointError, ConfigError, DataError, DimensionError, NumericError
from logger_config import log_numeric_error, log_training_step
from networks import ModelGraph
from relatorios import escrever_csv, exportar_planilha
from scn import finetune_mode
from validators import (validar_inteiro_nao_negativo, validar_pesos_lambda, validar_probabilidade,
                        validar_valor_positivo)


logger = logging.getLogger('schanger.training')

Sample = Union[SamplePair, SegSample]


# ==================== LOSS ====================

@dataclass
class LossConfig:
    """Pesos das seis cabeças e constante de suavização do Dice."""

    lambdas: Tuple[float, ...] = (1.0, 1.0, 1.0, 1.0, 1.0, 1.0)
    dice_smooth: float = 1.0

    def validate(self) -> None:
        ok, msg = validar_pesos_lambda(self.lambdas)
        if not ok:
            raise ConfigError(msg)
        ok, msg = validar_valor_positivo(self.dice_smooth, 'dice_smooth')
        if not ok:
            raise ConfigError(msg)


def bce_dice_loss(logits: torch.Tensor, target: torch.Tensor, cfg: Optional[LossConfig] = None) -> torch.Tensor:
    """
    BCE média sobre pixels + (1 - Dice suave), Dice por amostra e média no lote.

    Args:
        logits: Saída da cabeça (N, 1, H, W), sem sigmoid
        target: Máscara binária de mesma forma
        cfg: Configuração da loss

    Returns:
        Escalar diferenciável
    """
    cfg = cfg or LossConfig()
    if logits.shape != target.shape:
        raise DimensionError('bce_dice_loss', tuple(target.shape), tuple(logits.shape))
    if not bool(((target == 0) | (target == 1)).all()):
        raise DataError("Máscara alvo com valores fora de {0, 1}")

    target = target.to(logits.dtype)
    bce = F.binary_cross_entropy_with_logits(logits, target, reduction='mean')

    p = torch.sigmoid(logits).flatten(1)
    y = target.flatten(1)
    s = cfg.dice_smooth
    dice = (2.0 * (p * y).sum(dim=1) + s) / (p.sum(dim=1) + y.sum(dim=1) + s)
    return bce + (1.0 - dice).mean()


def deep_supervision_loss(logit_maps: Sequence[torch.Tensor], target: torch.Tensor,
                          cfg: Optional[LossConfig] = None) -> torch.Tensor:
    """Soma ponderada das losses das seis cabeças (laterais 1..5 e fundida)."""
    cfg = cfg or LossConfig()
    if len(logit_maps) != 6:
        raise DimensionError('deep_supervision_loss', '6 mapas de logits', len(logit_maps))
    if len(cfg.lambdas) != 6:
        raise ConfigError(f"São necessários 6 pesos lambda (recebidos {len(cfg.lambdas)})")
    total = logit_maps[0].new_zeros(())
    for lam, logits in zip(cfg.lambdas, logit_maps):
        total = total + lam * bce_dice_loss(logits, target, cfg)
    return total


# ==================== EMA ====================

@dataclass
class EmaState:
    """
    Pesos sombra θ_k ← m·θ_k + (1 - m)·θ_q.

    Com ``warmup`` o momento efetivo no passo k é min(m, (1 + k)/(10 + k)).
    """

    shadow: Checkpoint
    momentum: float = 0.9998
    warmup: bool = False
    updates: int = 0

    def __post_init__(self):
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError(f"Momento EMA deve estar em [0, 1) (recebido {self.momentum})")

    @classmethod
    def from_checkpoint(cls, ckpt: Checkpoint, momentum: float = 0.9998, warmup: bool = False) -> "EmaState":
        return cls(ckpt.clone(), momentum, warmup)

    def effective_momentum(self) -> float:
        if self.warmup:
            return min(self.momentum, (1.0 + self.updates) / (10.0 + self.updates))
        return self.momentum


def ema_update(state: EmaState, current: Checkpoint) -> EmaState:
    """Combinação convexa elemento a elemento, sincronizada em todos os caminhos."""
    if list(state.shadow.paths()) != list(current.paths()):
        missing = set(state.shadow.paths()) ^ set(current.paths())
        raise ConfigError(f"Caminhos divergentes entre sombra e modelo: {sorted(missing)[:5]}")

    m = state.effective_momentum()
    with torch.no_grad():
        for name, shadow in state.shadow.tensors.items():
            cur = current[name]
            if not shadow.is_floating_point():
                shadow.copy_(cur)
                continue
            shadow.mul_(m).add_(cur.to(shadow.dtype), alpha=1.0 - m)
    state.updates += 1
    return state


# ==================== CRONOGRAMA ====================

def lr_schedule(step: int, warmup_steps: int, total_steps: int, base_lr: float) -> float:
    """
    Rampa linear 0 -> base_lr no aquecimento, depois decaimento cosseno até 0.

    Raises:
        ConfigError: total < warmup ou passo fora de [0, total]
    """
    if total_steps < warmup_steps or warmup_steps < 0:
        raise ConfigError(f"total_steps ({total_steps}) deve ser >= warmup_steps ({warmup_steps})")
    if not 0 <= step <= total_steps:
        raise ConfigError(f"Passo {step} fora de [0, {total_steps}]")

    if step < warmup_steps:
        return base_lr * step / warmup_steps

    decay_steps = total_steps - warmup_steps
    progress = (step - warmup_steps) / decay_steps if decay_steps > 0 else 1.0
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * progress))


# ==================== AUMENTO DE DADOS ====================

@dataclass
class AugmentationConfig:
    """Probabilidades e faixas do aumento de dados."""

    crop: int = 256
    flip_p: float = 0.5
    geometric_p: float = 0.3
    photometric_p: float = 0.5
    temporal_swap_p: float = 0.5
    max_rotation: float = 15.0
    max_translate: float = 0.1
    scale_range: Tuple[float, float] = (0.9, 1.1)
    photometric_ops: Tuple[str, ...] = ('contrast', 'gamma', 'emboss', 'noise', 'hsv', 'motion_blur')

    def validate(self) -> None:
        for name in ('flip_p', 'geometric_p', 'photometric_p', 'temporal_swap_p'):
            ok, msg = validar_probabilidade(getattr(self, name), name)
            if not ok:
                raise ConfigError(msg)
        if self.crop < 1:
            raise ConfigError("crop deve ser positivo")
        unknown = [op for op in self.photometric_ops if op not in PHOTOMETRIC_OPS]
        if unknown:
            raise ConfigError(f"Operações fotométricas desconhecidas: {unknown}")

    @classmethod
    def disabled(cls, crop: int = 256) -> "AugmentationConfig":
        return cls(crop=crop, flip_p=0.0, geometric_p=0.0, photometric_p=0.0, temporal_swap_p=0.0)


def _depthwise3x3(img: torch.Tensor, kernel: torch.Tensor) -> torch.Tensor:
    c = img.shape[0]
    weight = kernel.to(img.dtype).expand(c, 1, 3, 3).contiguous()
    return F.conv2d(F.pad(img[None], (1, 1, 1, 1), mode='replicate'), weight, groups=c)[0]


def _contrast(img: torch.Tensor, rng: np.random.Generator) -> torch.Tensor:
    return TF.adjust_contrast(img, float(rng.uniform(0.7, 1.3)))


def _gamma(img: torch.Tensor, rng: np.random.Generator) -> torch.Tensor:
    return TF.adjust_gamma(img, float(rng.uniform(0.7, 1.5)))


def _emboss(img: torch.Tensor, rng: np.random.Generator) -> torch.Tensor:
    # Kernel de relevo 3x3 convencional, misturado à imagem original
    kernel = torch.tensor([[-2.0, -1.0, 0.0], [-1.0, 1.0, 1.0], [0.0, 1.0, 2.0]])
    alpha = float(rng.uniform(0.2, 0.5))
    return (1.0 - alpha) * img + alpha * _depthwise3x3(img, kernel)


def _noise(img: torch.Tensor, rng: np.random.Generator) -> torch.Tensor:
    std = float(rng.uniform(0.01, 0.05))
    return img + torch.from_numpy(rng.normal(0.0, std, size=tuple(img.shape)).astype(np.float32)).to(img.dtype)


def _hsv(img: torch.Tensor, rng: np.random.Generator) -> torch.Tensor:
    img = TF.adjust_hue(img, float(rng.uniform(-0.05, 0.05)))
    img = TF.adjust_saturation(img, float(rng.uniform(0.7, 1.3)))
    return TF.adjust_brightness(img, float(rng.uniform(0.8, 1.2)))


def _motion_blur(img: torch.Tensor, rng: np.random.Generator) -> torch.Tensor:
    # Linha 3x3 horizontal ou vertical normalizada
    kernel = torch.zeros(3, 3)
    if rng.random() < 0.5:
        kernel[1, :] = 1.0 / 3.0
    else:
        kernel[:, 1] = 1.0 / 3.0
    return _depthwise3x3(img, kernel)


PHOTOMETRIC_OPS: Dict[str, Callable[[torch.Tensor, np.random.Generator], torch.Tensor]] = {
    'contrast': _contrast,
    'gamma': _gamma,
    'emboss': _emboss,
    'noise': _noise,
    'hsv': _hsv,
    'motion_blur': _motion_blur,
}


def _photometric(img: torch.Tensor, cfg: AugmentationConfig, rng: np.random.Generator) -> torch.Tensor:
    if not cfg.photometric_ops or rng.random() >= cfg.photometric_p:
        return img
    name = cfg.photometric_ops[int(rng.integers(len(cfg.photometric_ops)))]
    return PHOTOMETRIC_OPS[name](img, rng).clamp(0.0, 1.0)


def augment(sample: Sample, cfg: AugmentationConfig, rng: np.random.Generator) -> Sample:
    """
    Aplica o aumento de dados a um par (ou amostra de segmentação).

    A mesma transformação geométrica vale para imagens, máscara e pegadas;
    a fotometria é sorteada por imagem; a troca temporal permuta apenas as
    imagens (e suas pegadas), mantendo a máscara de mudança.
    """
    is_pair = isinstance(sample, SamplePair)
    if is_pair:
        images = [sample.image_t1, sample.image_t2]
        masks = [sample.mask] + [e for e in (sample.extent_t1, sample.extent_t2) if e is not None]
    else:
        images = [sample.image]
        masks = [sample.mask]

    size = tuple(images[0].shape[-2:])
    for t in images + masks:
        if tuple(t.shape[-2:]) != size:
            raise DimensionError('augment', size, tuple(t.shape[-2:]), sample.id)

    h, w = size
    ch, cw = min(cfg.crop, h), min(cfg.crop, w)
    if (ch, cw) != (h, w):
        top = int(rng.integers(0, h - ch + 1))
        left = int(rng.integers(0, w - cw + 1))
        images = [t[..., top:top + ch, left:left + cw] for t in images]
        masks = [t[..., top:top + ch, left:left + cw] for t in masks]

    if rng.random() < cfg.flip_p:
        images = [TF.hflip(t) for t in images]
        masks = [TF.hflip(t) for t in masks]
    if rng.random() < cfg.flip_p:
        images = [TF.vflip(t) for t in images]
        masks = [TF.vflip(t) for t in masks]

    if rng.random() < cfg.geometric_p:
        angle = float(rng.uniform(-cfg.max_rotation, cfg.max_rotation))
        tx = int(round(rng.uniform(-cfg.max_translate, cfg.max_translate) * cw))
        ty = int(round(rng.uniform(-cfg.max_translate, cfg.max_translate) * ch))
        scale = float(rng.uniform(*cfg.scale_range))
        images = [TF.affine(t, angle=angle, translate=[tx, ty], scale=scale, shear=[0.0, 0.0],
                            interpolation=InterpolationMode.BILINEAR) for t in images]
        masks = [TF.affine(t, angle=angle, translate=[tx, ty], scale=scale, shear=[0.0, 0.0],
                           interpolation=InterpolationMode.NEAREST) for t in masks]

    images = [_photometric(t, cfg, rng) for t in images]
    images = [t.contiguous() for t in images]
    masks = [t.contiguous() for t in masks]

    if not is_pair:
        return SegSample(images[0], masks[0], sample.id)

    extents = masks[1:] if len(masks) == 3 else [None, None]
    if rng.random() < cfg.temporal_swap_p:
        images = images[::-1]
        extents = extents[::-1]
    return SamplePair(images[0], images[1], masks[0], sample.id, extents[0], extents[1], dict(sample.meta))


# ==================== TREINO ====================

@dataclass
class TrainConfig:
    """Receita de treino (AdamW, cosseno com aquecimento, EMA)."""

    base_lr: float = 5e-4
    weight_decay: float = 2e-4
    warmup_epochs: int = 1
    total_epochs: int = 10
    batch_size: int = 8
    seed: int = 0
    ema_momentum: float = 0.9998
    ema_warmup: bool = True
    num_workers: int = 0
    log_every: int = 10
    progress: bool = False

    def validate(self) -> None:
        if not (math.isfinite(self.base_lr) and self.base_lr >= 0):
            raise ConfigError(f"base_lr deve ser >= 0 (recebido {self.base_lr})")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay não pode ser negativo")
        for name in ('warmup_epochs', 'total_epochs', 'num_workers', 'seed'):
            ok, msg = validar_inteiro_nao_negativo(getattr(self, name), name)
            if not ok:
                raise ConfigError(msg)
        if self.total_epochs < 1 or self.batch_size < 1 or self.log_every < 1:
            raise ConfigError("total_epochs, batch_size e log_every devem ser >= 1")
        if self.warmup_epochs > self.total_epochs:
            raise ConfigError(f"warmup_epochs ({self.warmup_epochs}) > total_epochs ({self.total_epochs})")
        if not 0.0 <= self.ema_momentum < 1.0:
            raise ConfigError(f"ema_momentum deve estar em [0, 1) (recebido {self.ema_momentum})")


@dataclass
class EpochRecord:
    epoch: int
    mean_loss: float
    lr: float


class TrainResult(NamedTuple):
    checkpoint: Checkpoint
    ema_checkpoint: Checkpoint
    history: List[EpochRecord]


class TrainingDataset(Dataset):
    """Aplica aumento semeado por (semente, época, índice) e normaliza as imagens."""

    def __init__(self, samples: Sequence[Sample], aug_cfg: AugmentationConfig, seed: int):
        self.samples = list(samples)
        self.aug_cfg = aug_cfg
        self.seed = seed
        self.epoch = 0

    def set_epoch(self, epoch: int) -> None:
        self.epoch = epoch

    def __len__(self) -> int:
        return len(self.samples)

    def __getitem__(self, idx: int):
        rng = np.random.default_rng([self.seed, self.epoch, idx])
        s = augment(self.samples[idx], self.aug_cfg, rng)
        if isinstance(s, SamplePair):
            return normalize_image(s.image_t1), normalize_image(s.image_t2), s.mask
        return normalize_image(s.image), s.mask


def forward_batch(model: torch.nn.Module, mode: str, batch) -> Tuple[List[torch.Tensor], torch.Tensor]:
    """Executa a rede sobre um lote do DataLoader; retorna (mapas, máscara)."""
    if mode == 'schanger':
        img1, img2, mask = batch
        return model(img1, img2), mask
    img, mask = batch
    return model(img), mask


def parameter_groups(model: torch.nn.Module, trainable: Sequence[str]
                     ) -> Tuple[List[torch.nn.Parameter], List[torch.nn.Parameter]]:
    """
    Separa os parâmetros treináveis em (com decaimento, sem decaimento).

    Bias e afins de normalização (ndim <= 1) ficam sem decaimento. Parâmetros
    compartilhados entram uma única vez.

    Raises:
        CheckpointError: caminho treinável que não é parâmetro do modelo
    """
    named = dict(model.named_parameters(remove_duplicate=False))
    missing = [p for p in trainable if p not in named]
    if missing:
        raise CheckpointError("Caminhos treináveis ausentes no modelo", missing_paths=missing)
    decay, no_decay, seen = [], [], set()
    for path in trainable:
        p = named[path]
        if id(p) in seen:
            continue
        seen.add(id(p))
        (no_decay if p.ndim <= 1 else decay).append(p)
    return decay, no_decay


def _check_dataset(graph: ModelGraph, dataset: Sequence[Sample]) -> None:
    if len(dataset) == 0:
        raise DataError("Dataset de treino vazio")
    expected = SamplePair if graph.mode == 'schanger' else SegSample
    if not isinstance(dataset[0], expected):
        raise ConfigError(f"A {graph.mode} exige amostras do tipo {expected.__name__}")


def train(graph: ModelGraph, ckpt: Checkpoint, dataset: Sequence[Sample],
          train_cfg: Optional[TrainConfig] = None, loss_cfg: Optional[LossConfig] = None,
          aug_cfg: Optional[AugmentationConfig] = None) -> TrainResult:
    """
    Treina a rede a partir de ``ckpt``.

    Args:
        graph: Rede construída (SPNet ou SChanger)
        ckpt: Checkpoint inicial (não é modificado)
        dataset: Amostras de treino (SegSample para SPNet, SamplePair para SChanger)
        train_cfg: Receita de treino
        loss_cfg: Configuração da loss
        aug_cfg: Configuração do aumento de dados

    Returns:
        TrainResult(checkpoint final, checkpoint EMA, histórico por época)

    Raises:
        NumericError: loss não finita (o passo é informado)
    """
    train_cfg = train_cfg or TrainConfig()
    loss_cfg = loss_cfg or LossConfig()
    aug_cfg = aug_cfg or AugmentationConfig()
    train_cfg.validate()
    loss_cfg.validate()
    aug_cfg.validate()
    _check_dataset(graph, dataset)

    graph.load(ckpt)
    model = graph.model
    model.train()

    decay, no_decay = parameter_groups(model, finetune_mode(ckpt))
    optimizer = torch.optim.AdamW(
        [{'params': decay, 'weight_decay': train_cfg.weight_decay},
         {'params': no_decay, 'weight_decay': 0.0}],
        lr=train_cfg.base_lr, betas=(0.9, 0.999))

    data = TrainingDataset(dataset, aug_cfg, train_cfg.seed)
    loader = DataLoader(data, batch_size=train_cfg.batch_size, shuffle=True,
                        generator=torch.Generator().manual_seed(train_cfg.seed),
                        num_workers=train_cfg.num_workers, drop_last=False)

    steps_per_epoch = len(loader)
    total_steps = steps_per_epoch * train_cfg.total_epochs
    warmup_steps = steps_per_epoch * train_cfg.warmup_epochs

    live = Checkpoint.from_module(model, copy=False)
    ema = EmaState.from_checkpoint(live, train_cfg.ema_momentum, train_cfg.ema_warmup)
    history: List[EpochRecord] = []

    epochs = range(1, train_cfg.total_epochs + 1)
    if train_cfg.progress:
        from tqdm import tqdm
        epochs = tqdm(epochs, desc=f"treino {graph.mode}", unit='época')

    step = 0
    lr = 0.0
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(train_cfg.seed)
        graph.set_generator(None)
        for epoch in epochs:
            data.set_epoch(epoch)
            losses = []
            for batch in loader:
                lr = lr_schedule(step, warmup_steps, total_steps, train_cfg.base_lr)
                for group in optimizer.param_groups:
                    group['lr'] = lr

                maps, target = forward_batch(model, graph.mode, batch)
                loss = deep_supervision_loss(maps, target, loss_cfg)
                if not bool(torch.isfinite(loss)):
                    err = NumericError("Loss não finita durante o treino", step=step)
                    log_numeric_error(logger, 'train', err, {'epoch': epoch, 'lr': lr})
                    raise err

                optimizer.zero_grad(set_to_none=True)
                loss.backward()
                optimizer.step()
                ema_update(ema, live)

                losses.append(float(loss.item()))
                step += 1
                if step % train_cfg.log_every == 0:
                    log_training_step(logger, epoch, step, losses[-1], lr)

            record = EpochRecord(epoch, float(np.mean(losses)), lr)
            history.append(record)
            logger.info(f"Época {epoch}/{train_cfg.total_epochs} - loss média {record.mean_loss:.6f}")

    model.eval()
    meta = dict(ckpt.metadata)
    meta.update({'trained_epochs': train_cfg.total_epochs, 'train_seed': train_cfg.seed})
    final = Checkpoint.from_module(model, meta)
    ema_ckpt = ema.shadow
    ema_ckpt.metadata = {**meta, 'ema': True, 'ema_momentum': train_cfg.ema_momentum}
    return TrainResult(final, ema_ckpt, history)


def write_history_csv(history: Sequence[EpochRecord], path):
    """Histórico de loss (época, loss média, lr)."""
    return escrever_csv(path, ['epoch', 'mean_loss', 'lr'],
                        [(r.epoch, repr(r.mean_loss), repr(r.lr)) for r in history])


def export_history_xlsx(history: Sequence[EpochRecord], path):
    return exportar_planilha(path, 'Histórico de loss', ['Época', 'Loss média', 'LR'],
                             [(r.epoch, r.mean_loss, r.lr) for r in history])
