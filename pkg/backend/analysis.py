"""
Contabilidade estática de parâmetros e MACs sobre um ModelGraph.

Convenção de MACs:
    - conv: out_h·out_w·out_ch·(in_ch/groups)·kh·kw, mais um por elemento
      de saída para o bias;
    - normalização: dois por elemento (normalização + afim);
    - ativação, soma/produto elemento a elemento, pooling global e max
      pooling: um por elemento processado;
    - interpolação bilinear: quatro por elemento de saída.

Na SChanger as camadas siamesas contam uma vez por fluxo; TFMs, o mapa de
atenção compartilhado e a cabeça (após a fusão) contam uma vez. FLOPs são
reportados como multiplicador × MACs (2 na leitura primária, 1 na
alternativa).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple

import tensor_ops as ops
from blocks import (LFEM, MSFSH, SCAM, VANM, Conv, ConvFFN, DropPath, LargeKernelAttention, Norm, SqueezeExcite,
                    Stem, TemporalFusion)
from errors import ConfigError, DimensionError, ReconciliationError
from networks import (DOWNSAMPLE_RATIOS, DecoderStage, EncoderStage, ModelGraph, build_schanger, build_spnet,
                      get_variant)
from relatorios import escrever_csv, exportar_planilha
from validators import validar_tamanho_entrada


logger = logging.getLogger('schanger.analysis')

PRIMARY_MULTIPLIER = 2
ALTERNATE_MULTIPLIER = 1

# Valores publicados: parâmetros, FLOPs (entrada 256x256) e ΔParams
REFERENCE = {
    'small': {'params': 0.607e6, 'flops': 6.242e9, 'delta': 0.026e6},
    'base': {'params': 2.370e6, 'flops': 18.275e9, 'delta': 0.105e6},
}
DELTA_FRACTION_RANGE = (0.037, 0.055)


class CostRow(NamedTuple):
    path: str
    kind: str
    param_count: int
    mac_count: int


@dataclass
class CostLedger:
    """Linhas (caminho, tipo, parâmetros, MACs) e totais derivados."""

    rows: List[CostRow] = field(default_factory=list)
    multiplier: int = PRIMARY_MULTIPLIER

    @property
    def params(self) -> int:
        return sum(r.param_count for r in self.rows)

    @property
    def macs(self) -> int:
        return sum(r.mac_count for r in self.rows)

    @property
    def flops(self) -> int:
        return self.multiplier * self.macs

    @property
    def totals(self) -> Tuple[int, int, int]:
        return self.params, self.macs, self.flops

    def by_kind(self) -> Dict[str, int]:
        out: Dict[str, int] = {}
        for r in self.rows:
            out[r.kind] = out.get(r.kind, 0) + r.mac_count
        return out


# ==================== PARÂMETROS ====================

def conv_param_count(m: Conv) -> int:
    return m.out_ch * (m.in_ch // m.groups) * m.kernel_size * m.kernel_size + (m.out_ch if m.bias is not None else 0)


def norm_param_count(m: Norm) -> int:
    # Estatísticas correntes não são treináveis
    return 2 * m.channels


def count_params(graph: ModelGraph) -> CostLedger:
    """
    Parâmetros treináveis a partir dos atributos de Conv/Norm.

    Raises:
        ConfigError: módulo folha com parâmetros próprios de tipo desconhecido
    """
    ledger = CostLedger()
    for path, m in graph.model.named_modules():
        if isinstance(m, Conv):
            ledger.rows.append(CostRow(path, 'conv', conv_param_count(m), 0))
        elif isinstance(m, Norm):
            ledger.rows.append(CostRow(path, 'norm', norm_param_count(m), 0))
        elif any(True for _ in m.parameters(recurse=False)):
            raise ConfigError(f"Tipo de camada desconhecido com parâmetros: {path} ({type(m).__name__})")
    return ledger


# ==================== MACs ====================

class _Walker:
    """Percorre a rede seguindo os forwards e registra o custo de cada operação."""

    def __init__(self):
        self.ledger = CostLedger()

    def _add(self, path: str, kind: str, macs: int, params: int = 0) -> None:
        self.ledger.rows.append(CostRow(path, kind, params, int(macs)))

    def conv(self, path: str, m: Conv, h: int, w: int, streams: int = 1) -> Tuple[int, int]:
        ho = ops.conv_output_size(h, m.kernel_size, m.stride, m.padding, m.dilation)
        wo = ops.conv_output_size(w, m.kernel_size, m.stride, m.padding, m.dilation)
        macs = ho * wo * m.out_ch * (m.in_ch // m.groups) * m.kernel_size * m.kernel_size
        if m.bias is not None:
            macs += ho * wo * m.out_ch
        self._add(path, 'conv', macs * streams, conv_param_count(m))
        return ho, wo

    def norm(self, path: str, m: Norm, h: int, w: int, streams: int = 1) -> None:
        self._add(path, 'norm', 2 * h * w * m.channels * streams, norm_param_count(m))

    def act(self, path: str, elements: int, streams: int = 1) -> None:
        self._add(path, 'activation', elements * streams)

    def elementwise(self, path: str, elements: int, streams: int = 1) -> None:
        self._add(path, 'elementwise', elements * streams)

    def pool(self, path: str, elements: int, streams: int = 1) -> None:
        self._add(path, 'pool', elements * streams)

    def resize(self, path: str, out_elements: int, streams: int = 1) -> None:
        self._add(path, 'resize', 4 * out_elements * streams)

    # Blocos

    def stem(self, path: str, m: Stem, h: int, w: int, s: int) -> None:
        self.conv(f"{path}.conv", m.conv, h, w, s)
        self.norm(f"{path}.norm", m.norm, h, w, s)
        self.act(f"{path}.silu", h * w * m.norm.channels, s)

    def squeeze_excite(self, path: str, m: SqueezeExcite, h: int, w: int, s: int) -> None:
        c = m.channels
        self.pool(f"{path}.gap", h * w * c, s)
        self.conv(f"{path}.reduce", m.reduce, 1, 1, s)
        self.act(f"{path}.silu", m.reduce.out_ch, s)
        self.conv(f"{path}.expand", m.expand, 1, 1, s)
        self.act(f"{path}.sigmoid", c, s)
        self.elementwise(f"{path}.gate", h * w * c, s)

    def lfem(self, path: str, m: LFEM, h: int, w: int, s: int) -> None:
        hid = m.cfg.hidden_ch
        self.conv(f"{path}.expand", m.expand, h, w, s)
        self.norm(f"{path}.norm1", m.norm1, h, w, s)
        self.act(f"{path}.silu1", h * w * hid, s)
        self.conv(f"{path}.dw", m.dw, h, w, s)
        self.norm(f"{path}.norm2", m.norm2, h, w, s)
        self.act(f"{path}.silu2", h * w * hid, s)
        self.squeeze_excite(f"{path}.se", m.se, h, w, s)
        self.conv(f"{path}.project", m.project, h, w, s)
        self.norm(f"{path}.norm3", m.norm3, h, w, s)
        if m.drop_path is not None:
            self.elementwise(f"{path}.residual", h * w * m.cfg.out_ch, s)

    def tfm(self, path: str, m: TemporalFusion, h: int, w: int) -> None:
        c = m.channels
        if m.kind == 'add':
            self.elementwise(f"{path}.add", h * w * c)
        elif m.kind == 'absdiff':
            self.elementwise(f"{path}.sub", h * w * c)
            self.act(f"{path}.abs", h * w * c)
        else:
            self.conv(f"{path}.reduce", m.reduce, h, w)
            self.norm(f"{path}.norm", m.norm, h, w)
            self.act(f"{path}.gelu", h * w * c)

    def lka(self, path: str, m: LargeKernelAttention, h: int, w: int, s: int) -> None:
        self.conv(f"{path}.dw", m.dw, h, w, s)
        self.conv(f"{path}.dwd", m.dwd, h, w, s)
        self.conv(f"{path}.pw", m.pw, h, w, s)

    def ffn(self, path: str, m: ConvFFN, h: int, w: int, s: int) -> None:
        self.conv(f"{path}.fc1", m.fc1, h, w, s)
        self.conv(f"{path}.dw", m.dw, h, w, s)
        self.act(f"{path}.gelu", h * w * m.fc1.out_ch, s)
        self.conv(f"{path}.fc2", m.fc2, h, w, s)

    def attention(self, path: str, m: VANM, h: int, w: int, s: int) -> None:
        n = h * w * m.channels
        self.norm(f"{path}.norm1", m.norm1, h, w, s)
        self.conv(f"{path}.proj1", m.proj1, h, w, s)
        self.act(f"{path}.gelu", n, s)
        if isinstance(m, SCAM):
            # Um mapa de atenção a partir dos dois fluxos fundidos
            self.tfm(f"{path}.tfm", m.tfm, h, w)
            self.lka(f"{path}.lka", m.lka, h, w, 1)
        else:
            self.lka(f"{path}.lka", m.lka, h, w, s)
        self.elementwise(f"{path}.lka.mul", n, s)
        self.conv(f"{path}.proj2", m.proj2, h, w, s)
        self.elementwise(f"{path}.add1", n, s)
        self.norm(f"{path}.norm2", m.norm2, h, w, s)
        self.ffn(f"{path}.ffn", m.ffn, h, w, s)
        self.elementwise(f"{path}.add2", n, s)

    def encoder_stage(self, path: str, m: EncoderStage, h: int, w: int, in_ch: int, s: int) -> Tuple[int, int]:
        if m.pool:
            self.pool(f"{path}.pool", h * w * in_ch, s)
            h, w = h // 2, w // 2
        self.lfem(f"{path}.lfem1", m.lfem1, h, w, s)
        self.lfem(f"{path}.lfem2", m.lfem2, h, w, s)
        return h, w

    def decoder_stage(self, path: str, m: DecoderStage, h: int, w: int, deeper: bool, s: int) -> None:
        if deeper:
            n = h * w * m.lfem1.cfg.in_ch
            self.resize(f"{path}.upsample", n, s)
            self.elementwise(f"{path}.skip_add", n, s)
        self.lfem(f"{path}.lfem1", m.lfem1, h, w, s)
        self.lfem(f"{path}.lfem2", m.lfem2, h, w, s)

    def head(self, path: str, m: MSFSH, sizes: Sequence[Tuple[int, int]], full: Tuple[int, int]) -> None:
        fh, fw = full
        for i, (h, w) in enumerate(sizes, start=1):
            side = m.sides[f"side{i}"]
            self.conv(f"{path}.sides.side{i}", side, h, w)
            if (h, w) != (fh, fw):
                self.resize(f"{path}.sides.side{i}.resize", fh * fw * side.out_ch)
        self.conv(f"{path}.fuse", m.fuse, fh, fw)


def count_flops(graph: ModelGraph, height: int = 256, width: int = 256,
                multiplier: int = PRIMARY_MULTIPLIER) -> CostLedger:
    """
    MACs de um forward sobre uma entrada (par bitemporal na SChanger).

    Raises:
        DimensionError: tamanho não resolvível pela rede (não múltiplo de 16)
    """
    ok, msg = validar_tamanho_entrada(height, width)
    if not ok:
        raise DimensionError('count_flops', 'dimensões múltiplas de 16', (height, width), msg)

    model = graph.model
    streams = 2 if graph.mode == 'schanger' else 1
    walker = _Walker()
    walker.ledger.multiplier = multiplier
    channels = graph.variant.channels

    walker.stem('stem', model.stem, height, width, streams)
    sizes = []
    h, w = height, width
    for s in range(1, 6):
        h, w = walker.encoder_stage(f"encoder.stage{s}", model.encoder[f"stage{s}"], h, w, channels[s - 1], streams)
        sizes.append((h, w))
        walker.attention(f"attention.stage{s}", model.attention[f"stage{s}"], h, w, streams)

    for s in range(5, 0, -1):
        h, w = sizes[s - 1]
        walker.decoder_stage(f"decoder.stage{s}", model.decoder[f"stage{s}"], h, w, s < 5, streams)

    if graph.mode == 'schanger':
        for s in range(1, 6):
            h, w = sizes[s - 1]
            walker.tfm(f"fusion.stage{s}", model.fusion[f"stage{s}"], h, w)

    walker.head('head', model.head, sizes, (height, width))

    counted = {r.path for r in walker.ledger.rows if r.kind in ('conv', 'norm')}
    for path, m in model.named_modules():
        if isinstance(m, (Conv, Norm)) and path not in counted:
            raise ConfigError(f"Camada fora do percurso de custo: {path}")
        if not isinstance(m, (Conv, Norm, DropPath)) and any(True for _ in m.parameters(recurse=False)):
            raise ConfigError(f"Tipo de camada desconhecido com parâmetros: {path} ({type(m).__name__})")
    return walker.ledger


# ==================== TABELA DE EFICIÊNCIA ====================

@dataclass
class VariantSummary:
    name: str
    channels: Tuple[int, ...]
    spnet_params: int
    schanger_params: int
    macs: int
    height: int = 256
    width: int = 256

    @property
    def delta_params(self) -> int:
        return self.schanger_params - self.spnet_params

    @property
    def delta_fraction(self) -> float:
        return self.delta_params / self.schanger_params if self.schanger_params else 0.0

    def flops(self, multiplier: int = PRIMARY_MULTIPLIER) -> int:
        return multiplier * self.macs


def summarize_variant(name: str, height: int = 256, width: int = 256, fusion: str = 'tfm_ln') -> VariantSummary:
    """Constrói SPNet e SChanger da variante e contabiliza ambas."""
    cfg = get_variant(name, fusion=fusion)
    sp_graph, _ = build_spnet(cfg, seed=0)
    sc_graph, _ = build_schanger(cfg, seed=0)
    summary = VariantSummary(
        name=cfg.name,
        channels=tuple(cfg.channels),
        spnet_params=count_params(sp_graph).params,
        schanger_params=count_params(sc_graph).params,
        macs=count_flops(sc_graph, height, width).macs,
        height=height,
        width=width,
    )
    logger.info(f"SChanger-{cfg.name}: {summary.schanger_params} parâmetros, {summary.macs} MACs "
                f"({height}x{width}), ΔParams={summary.delta_params}")
    return summary


def table_rows(summaries: Sequence[VariantSummary], multiplier: int = PRIMARY_MULTIPLIER) -> List[List[str]]:
    """Seis linhas de estágio (razão e canais por variante) + Params, FLOPs e ΔParams."""
    rows = []
    for stage, ratio in enumerate(DOWNSAMPLE_RATIOS):
        rows.append([f"C{stage}", str(ratio)] + [str(s.channels[stage]) for s in summaries])
    rows.append(['Params (M)', ''] + [f"{s.schanger_params / 1e6:.3f}" for s in summaries])
    rows.append(['FLOPs (G)', ''] + [f"{s.flops(multiplier) / 1e9:.3f}" for s in summaries])
    rows.append(['ΔParams (M)', ''] + [f"{s.delta_params / 1e6:.3f} ({s.delta_fraction * 100:.1f}%)"
                                       for s in summaries])
    return rows


def table_columns(summaries: Sequence[VariantSummary]) -> List[str]:
    return ['Estágio', 'Razão'] + [f"SChanger-{s.name}" for s in summaries]


def emit_table(summaries: Sequence[VariantSummary], multiplier: int = PRIMARY_MULTIPLIER) -> str:
    """Tabela de eficiência em texto."""
    cols = table_columns(summaries)
    rows = table_rows(summaries, multiplier)
    widths = [max(len(str(r[i])) for r in [cols] + rows) for i in range(len(cols))]

    def _fmt(r):
        return '  '.join(str(v).ljust(widths[i]) if i < 2 else str(v).rjust(widths[i]) for i, v in enumerate(r))

    lines = [_fmt(cols), '-' * (sum(widths) + 2 * (len(cols) - 1))]
    lines += [_fmt(r) for r in rows[:6]]
    lines.append('-' * (sum(widths) + 2 * (len(cols) - 1)))
    lines += [_fmt(r) for r in rows[6:]]
    lines.append(f"FLOPs = {multiplier} x MACs, entrada {summaries[0].height}x{summaries[0].width} por instante"
                 if summaries else '')
    return '\n'.join(lines)


def write_table_csv(summaries: Sequence[VariantSummary], path, multiplier: int = PRIMARY_MULTIPLIER) -> Path:
    return escrever_csv(path, table_columns(summaries), table_rows(summaries, multiplier))


def export_table_xlsx(summaries: Sequence[VariantSummary], path, multiplier: int = PRIMARY_MULTIPLIER) -> Path:
    return exportar_planilha(path, 'Eficiência', table_columns(summaries), table_rows(summaries, multiplier))


def write_ledger_csv(ledger: CostLedger, path) -> Path:
    """Detalhamento por operação (caminho, tipo, parâmetros, MACs)."""
    return escrever_csv(path, ['path', 'kind', 'param_count', 'mac_count'], [tuple(r) for r in ledger.rows])


# ==================== RECONCILIAÇÃO ====================

@dataclass
class ReconciliationCheck:
    variant: str
    quantity: str
    measured: float
    reference: Optional[float]
    deviation: float
    ok: bool
    note: str = ''


def reconcile(summaries: Sequence[VariantSummary], tolerance_params: float = 0.05,
              tolerance_flops: float = 0.15,
              delta_range: Tuple[float, float] = DELTA_FRACTION_RANGE) -> List[ReconciliationCheck]:
    """
    Compara os totais com os valores publicados.

    FLOPs passam se qualquer uma das duas leituras (2 x MACs ou 1 x MACs)
    ficar dentro da tolerância.
    """
    checks = []
    for s in summaries:
        ref = REFERENCE.get(s.name)
        if ref is None:
            continue

        dev = s.schanger_params / ref['params'] - 1.0
        checks.append(ReconciliationCheck(s.name, 'params', s.schanger_params, ref['params'], dev,
                                          abs(dev) <= tolerance_params))

        devs = {m: s.flops(m) / ref['flops'] - 1.0 for m in (PRIMARY_MULTIPLIER, ALTERNATE_MULTIPLIER)}
        best = min(devs, key=lambda m: abs(devs[m]))
        checks.append(ReconciliationCheck(s.name, 'flops', s.flops(best), ref['flops'], devs[best],
                                          abs(devs[best]) <= tolerance_flops, f"multiplicador {best}"))

        lo, hi = delta_range
        checks.append(ReconciliationCheck(s.name, 'delta_fraction', s.delta_fraction, None, 0.0,
                                          lo <= s.delta_fraction <= hi, f"faixa [{lo:.3f}, {hi:.3f}]"))
        rounded = round(s.delta_params / 1e6, 3)
        checks.append(ReconciliationCheck(s.name, 'delta_params', s.delta_params, ref['delta'],
                                          s.delta_params / ref['delta'] - 1.0,
                                          abs(rounded - ref['delta'] / 1e6) < 1e-9, 'arredondado a 0.001M'))
    return checks


def format_checks(checks: Sequence[ReconciliationCheck]) -> str:
    lines = []
    for c in checks:
        status = 'OK' if c.ok else 'FORA'
        ref = f"{c.reference:.6g}" if c.reference is not None else '-'
        lines.append(f"[{status}] {c.variant:<6} {c.quantity:<15} medido={c.measured:.6g} ref={ref} "
                     f"desvio={c.deviation * 100:+.1f}% {c.note}".rstrip())
    return '\n'.join(lines)


def check_reconciliation(checks: Sequence[ReconciliationCheck]) -> None:
    """Raises ReconciliationError listando as verificações fora da tolerância."""
    failed = [c for c in checks if not c.ok]
    if failed:
        raise ReconciliationError("Totais fora da tolerância:\n" + format_checks(failed))
