"""
Linha de comando do toolkit SChanger.

Subcomandos: synth, pretrain, inflate, train, eval, predict, analyze, fewshot.
Códigos de saída: 0 ok, 2 configuração, 3 dados, 4 numérico, 5 reconciliação.
"""

import argparse
import logging
import os
import sys
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

sys.path.append(os.path.join(os.path.dirname(__file__), 'backend'))

from analysis import (PRIMARY_MULTIPLIER, check_reconciliation, emit_table, export_table_xlsx, format_checks,
                      reconcile, summarize_variant, write_table_csv)
from config import RunConfig, resolve_run_config
from data_io import (Checkpoint, lazy_cd_dataset, load_cd_dataset, load_checkpoint, load_seg_dataset,
                     save_checkpoint, segmentation_samples, synth_generate, write_cd_dataset, write_seg_dataset)
from errors import ConfigError, SChangerError
from evaluation import evaluate, export_tiles_xlsx, format_report, write_predictions, write_tiles_csv
from fewshot import export_fewshot_xlsx, run_fewshot, summarize, write_fewshot_csv
from logger_config import log_run_event, set_console_level, system_logger
from networks import VARIANT_CHANNELS, VariantConfig, build_graph, build_schanger, build_spnet, get_variant
from run_audit import registrar_execucao
from scn import inflate
from training import export_history_xlsx, train, write_history_csv
from validators import FRACOES_FEW_SHOT, validar_arquivo_existente, validar_diretorio_existente, validar_valor_positivo


logger = logging.getLogger('schanger.cli')

Artefatos = Tuple[List[Path], Dict[str, Any]]


# ==================== PARSER ====================

def _common_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', help='Arquivo INI com as seções [run], [train], [loss], [augment], [data]')
    common.add_argument('--seed', type=int, help='Semente da execução')
    common.add_argument('--variant', choices=sorted(VARIANT_CHANNELS), help='Variante da rede')
    common.add_argument('--out', help='Diretório de saída (padrão: runs/<comando>-<data>)')
    common.add_argument('--verbose', action='store_true', help='Mostra mensagens INFO no console')
    return common


def _training_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument('--epochs', type=int, help='Número total de épocas')
    p.add_argument('--warmup-epochs', type=int, help='Épocas de aquecimento linear')
    p.add_argument('--batch-size', type=int, help='Tamanho do lote')
    p.add_argument('--lr', type=float, help='Taxa de aprendizado base')
    p.add_argument('--workers', type=int, help='Workers do DataLoader')
    p.add_argument('--progress', action='store_true', default=None, help='Barra de progresso')
    p.add_argument('--xlsx', action='store_true', help='Exporta também planilhas .xlsx')


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='schanger', description='Detecção de mudanças bitemporal (SPNet/SChanger)')
    sub = parser.add_subparsers(dest='command', required=True)
    common = _common_parser()

    p = sub.add_parser('synth', parents=[common], help='Gera um dataset sintético')
    p.add_argument('--n-train', type=int, help='Pares de treino')
    p.add_argument('--n-val', type=int, help='Pares de validação')
    p.add_argument('--size', type=int, help='Lado das imagens (múltiplo de 16)')
    p.add_argument('--change-density', type=float, help='Fração alvo de pixels alterados')

    p = sub.add_parser('pretrain', parents=[common], help='Pré-treina a SPNet (instante único)')
    p.add_argument('--data', help='Raiz root/split/{image,label}')
    p.add_argument('--synthetic', action='store_true', help='Usa pares sintéticos gerados em memória')
    _training_flags(p)

    p = sub.add_parser('inflate', parents=[common], help='Infla um checkpoint SPNet em SChanger (SCN)')
    p.add_argument('--checkpoint', required=True, help='Checkpoint SPNet')

    p = sub.add_parser('train', parents=[common], help='Ajuste fino da SChanger')
    p.add_argument('--data', help='Raiz root/split/{A,B,label}')
    p.add_argument('--checkpoint', help='Checkpoint inicial (SChanger inflada ou SPNet)')
    p.add_argument('--init', choices=('inflated', 'random'), default='inflated', help='Inicialização')
    p.add_argument('--fraction', type=float, help='Fração do treino (few-shot)')
    _training_flags(p)

    for name, help_text in (('eval', 'Avalia um checkpoint'), ('predict', 'Grava rasters de predição')):
        p = sub.add_parser(name, parents=[common], help=help_text)
        p.add_argument('--data', help='Raiz do dataset')
        p.add_argument('--checkpoint', required=True, help='Checkpoint avaliado')
        p.add_argument('--split', help='Split avaliado (padrão: [data] val_split)')
        p.add_argument('--tile', type=int, help='Tamanho do tile de inferência')
        p.add_argument('--threshold', type=float, help='Limiar de binarização')
        if name == 'eval':
            p.add_argument('--xlsx', action='store_true', help='Exporta as métricas por tile em .xlsx')
        else:
            p.add_argument('--no-composite', action='store_true', help='Não grava a composição TP/FP/FN')

    p = sub.add_parser('analyze', parents=[common], help='Tabela de parâmetros e FLOPs')
    p.add_argument('--csv', action='store_true', help='Grava efficiency_table.csv')
    p.add_argument('--xlsx', action='store_true', help='Grava efficiency_table.xlsx')
    p.add_argument('--tolerance-params', type=float, default=0.05, help='Tolerância relativa de parâmetros')
    p.add_argument('--tolerance-flops', type=float, default=0.15, help='Tolerância relativa de FLOPs')
    p.add_argument('--size', type=int, default=256, help='Lado da entrada de cada instante')
    p.add_argument('--multiplier', type=int, choices=(1, 2), default=PRIMARY_MULTIPLIER,
                   help='FLOPs = multiplicador x MACs na tabela')

    p = sub.add_parser('fewshot', parents=[common], help='Compara inicialização SCN e aleatória com poucos dados')
    p.add_argument('--data', help='Raiz root/split/{A,B,label}')
    p.add_argument('--checkpoint', required=True, help='Checkpoint SPNet pré-treinado')
    p.add_argument('--fractions', type=float, nargs='+', default=list(FRACOES_FEW_SHOT), help='Frações do treino')
    p.add_argument('--seeds', type=int, nargs='+', help='Sementes (padrão: --seed)')
    _training_flags(p)
    return parser


def cli_overrides(args: argparse.Namespace) -> Dict[str, Dict[str, Any]]:
    """Flags da CLI agrupadas por seção do INI (None = não informado)."""
    g = lambda name: getattr(args, name, None)  # noqa: E731
    return {
        'run': {'variant': g('variant'), 'seed': g('seed'), 'tile': g('tile'), 'threshold': g('threshold')},
        'train': {'total_epochs': g('epochs'), 'warmup_epochs': g('warmup_epochs'), 'batch_size': g('batch_size'),
                  'base_lr': g('lr'), 'num_workers': g('workers'), 'progress': g('progress')},
        'data': {'root': g('data'), 'fraction': g('fraction'), 'size': g('size'), 'n_train': g('n_train'),
                 'n_val': g('n_val'), 'change_density': g('change_density'), 'val_split': g('split')},
    }


# ==================== AUXILIARES ====================

def _require_dir(path: Optional[str], what: str) -> Path:
    if not path:
        raise ConfigError(f"Informe o caminho do {what} (--data ou [data] root)")
    ok, msg = validar_diretorio_existente(path, what)
    if not ok:
        raise ConfigError(msg)
    return Path(path)


def _load_ckpt(path: Optional[str]) -> Checkpoint:
    if not path:
        raise ConfigError("Informe --checkpoint")
    ok, msg = validar_arquivo_existente(path, 'checkpoint')
    if not ok:
        raise ConfigError(msg)
    return load_checkpoint(path)


def _variant_for(args: argparse.Namespace, cfg: RunConfig, ckpt: Optional[Checkpoint] = None) -> VariantConfig:
    """Sem --variant explícito, a variante (e a fusão) do checkpoint prevalecem."""
    if ckpt is not None and args.variant is None and ckpt.metadata.get('variant'):
        return get_variant(ckpt.metadata['variant'], fusion=ckpt.metadata.get('fusion', cfg.run.fusion),
                           droppath_rate=cfg.run.droppath_rate)
    return cfg.variant()


def _save_history(history, out_dir: Path, xlsx: bool) -> List[Path]:
    paths = [write_history_csv(history, out_dir / 'loss_history.csv')]
    if xlsx:
        paths.append(export_history_xlsx(history, out_dir / 'loss_history.xlsx'))
    return paths


# ==================== COMANDOS ====================

def cmd_synth(args: argparse.Namespace, cfg: RunConfig) -> Artefatos:
    d = cfg.data
    train_pairs = synth_generate(cfg.seed, d.n_train, d.size, d.change_density)
    splits = [('train', train_pairs)]
    if d.n_val > 0:
        splits.append(('val', synth_generate(cfg.seed + 1, d.n_val, d.size, d.change_density)))

    for split, pairs in splits:
        write_cd_dataset(pairs, cfg.out_dir / 'cd', split)
        write_seg_dataset(segmentation_samples(pairs), cfg.out_dir / 'seg', split)

    print(f"Dataset sintético gravado em {cfg.out_dir} "
          f"({d.n_train} treino / {d.n_val} validação, {d.size}x{d.size})")
    return [cfg.out_dir / 'cd', cfg.out_dir / 'seg'], {'n_train': d.n_train, 'n_val': d.n_val, 'size': d.size}


def cmd_pretrain(args: argparse.Namespace, cfg: RunConfig) -> Artefatos:
    d = cfg.data
    if args.synthetic:
        samples = segmentation_samples(synth_generate(cfg.seed, d.n_train, d.size, d.change_density))
    else:
        samples = load_seg_dataset(_require_dir(d.root, 'dataset de segmentação'), d.split)

    variant = cfg.variant()
    graph, ckpt = build_spnet(variant, cfg.seed)
    result = train(graph, ckpt, samples, cfg.train, cfg.loss, cfg.augment)

    artefatos = [save_checkpoint(result.ema_checkpoint, cfg.out_dir / 'spnet.ckpt'),
                 save_checkpoint(result.checkpoint, cfg.out_dir / 'spnet_raw.ckpt')]
    artefatos += _save_history(result.history, cfg.out_dir, args.xlsx)
    final = result.history[-1].mean_loss
    print(f"SPNet-{variant.name} pré-treinada: {len(samples)} amostras, loss final {final:.6f}")
    return artefatos, {'final_loss': final, 'samples': len(samples)}


def cmd_inflate(args: argparse.Namespace, cfg: RunConfig) -> Artefatos:
    spnet = _load_ckpt(args.checkpoint)
    variant = _variant_for(args, cfg, spnet)
    schanger, report = inflate(spnet, variant, cfg.seed)

    artefatos = [save_checkpoint(schanger, cfg.out_dir / 'schanger_init.ckpt'),
                 report.save(cfg.out_dir / 'inflation_report.txt')]
    print(f"Inflação SCN ({variant.name}): {len(report.copied_paths)} caminhos herdados, "
          f"{len(report.new_paths)} novos")
    print(f"ΔParams = {report.new_param_count} ({report.delta_fraction * 100:.1f}% do total)")
    return artefatos, {'delta_params': report.new_param_count, 'delta_fraction': report.delta_fraction}


def cmd_train(args: argparse.Namespace, cfg: RunConfig) -> Artefatos:
    d = cfg.data
    root = _require_dir(d.root, 'dataset de detecção de mudanças')
    pairs = load_cd_dataset(root, d.split, d.fraction, cfg.seed)

    if args.init == 'random':
        variant = cfg.variant()
        graph, start = build_schanger(variant, cfg.seed)
    else:
        start = _load_ckpt(args.checkpoint)
        variant = _variant_for(args, cfg, start)
        if start.metadata.get('mode') == 'spnet':
            start, _ = inflate(start, variant, cfg.seed)
        graph, _ = build_schanger(variant, cfg.seed)

    result = train(graph, start, pairs, cfg.train, cfg.loss, cfg.augment)
    artefatos = [save_checkpoint(result.ema_checkpoint, cfg.out_dir / 'schanger.ckpt'),
                 save_checkpoint(result.checkpoint, cfg.out_dir / 'schanger_raw.ckpt')]
    artefatos += _save_history(result.history, cfg.out_dir, args.xlsx)
    detalhes: Dict[str, Any] = {'init': args.init, 'pairs': len(pairs), 'final_loss': result.history[-1].mean_loss}

    if (root / d.val_split / 'A').is_dir():
        report = evaluate(graph, result.ema_checkpoint, lazy_cd_dataset(root, d.val_split),
                          cfg.run.tile, cfg.run.threshold)
        text = format_report(report)
        (cfg.out_dir / 'val_metrics.txt').write_text(text + '\n', encoding='utf-8')
        artefatos.append(cfg.out_dir / 'val_metrics.txt')
        detalhes['val_f1'] = report.f1
        print(text)
    print(f"SChanger-{variant.name} treinada ({args.init}): {len(pairs)} pares, "
          f"loss final {detalhes['final_loss']:.6f}")
    return artefatos, detalhes


def _eval_dataset(graph, cfg: RunConfig):
    root = _require_dir(cfg.data.root, 'dataset')
    if graph.mode == 'schanger':
        return lazy_cd_dataset(root, cfg.data.val_split)
    return load_seg_dataset(root, cfg.data.val_split)


def _graph_for(args: argparse.Namespace, cfg: RunConfig):
    ckpt = _load_ckpt(args.checkpoint)
    variant = _variant_for(args, cfg, ckpt)
    graph, _ = build_graph(ckpt.metadata.get('mode', 'schanger'), variant, cfg.seed)
    return graph, ckpt


def cmd_eval(args: argparse.Namespace, cfg: RunConfig) -> Artefatos:
    graph, ckpt = _graph_for(args, cfg)
    report = evaluate(graph, ckpt, _eval_dataset(graph, cfg), cfg.run.tile, cfg.run.threshold)
    text = format_report(report)
    print(text)

    (cfg.out_dir / 'metrics.txt').write_text(text + '\n', encoding='utf-8')
    artefatos = [cfg.out_dir / 'metrics.txt', write_tiles_csv(report, cfg.out_dir / 'tiles.csv')]
    if args.xlsx:
        artefatos.append(export_tiles_xlsx(report, cfg.out_dir / 'tiles.xlsx'))
    return artefatos, {'precision': report.precision, 'recall': report.recall, 'f1': report.f1,
                       'skipped': report.skipped}


def cmd_predict(args: argparse.Namespace, cfg: RunConfig) -> Artefatos:
    graph, ckpt = _graph_for(args, cfg)
    written = write_predictions(graph, ckpt, _eval_dataset(graph, cfg), cfg.out_dir / 'predictions',
                                cfg.run.tile, cfg.run.threshold, composite=not args.no_composite)
    print(f"{len(written)} raster(s) gravados em {cfg.out_dir / 'predictions'}")
    return written, {'rasters': len(written)}


def cmd_analyze(args: argparse.Namespace, cfg: RunConfig) -> Artefatos:
    for name in ('tolerance_params', 'tolerance_flops'):
        ok, msg = validar_valor_positivo(getattr(args, name), name)
        if not ok:
            raise ConfigError(msg)
    names = [args.variant] if args.variant else ['small', 'base']
    summaries = [summarize_variant(n, args.size, args.size, cfg.run.fusion) for n in names]

    table = emit_table(summaries, args.multiplier)
    checks = reconcile(summaries, args.tolerance_params, args.tolerance_flops)
    print(table)
    print()
    print(format_checks(checks))

    (cfg.out_dir / 'efficiency_table.txt').write_text(table + '\n\n' + format_checks(checks) + '\n',
                                                       encoding='utf-8')
    artefatos = [cfg.out_dir / 'efficiency_table.txt']
    if args.csv:
        artefatos.append(write_table_csv(summaries, cfg.out_dir / 'efficiency_table.csv', args.multiplier))
    if args.xlsx:
        artefatos.append(export_table_xlsx(summaries, cfg.out_dir / 'efficiency_table.xlsx', args.multiplier))

    check_reconciliation(checks)
    return artefatos, {s.name: {'params': s.schanger_params, 'macs': s.macs, 'delta_params': s.delta_params}
                       for s in summaries}


def cmd_fewshot(args: argparse.Namespace, cfg: RunConfig) -> Artefatos:
    d = cfg.data
    root = _require_dir(d.root, 'dataset de detecção de mudanças')
    spnet = _load_ckpt(args.checkpoint)
    variant = _variant_for(args, cfg, spnet)
    train_pairs = load_cd_dataset(root, d.split)
    test_pairs = load_cd_dataset(root, d.val_split)

    seeds = args.seeds or [cfg.seed]
    runs = run_fewshot(spnet, variant, train_pairs, test_pairs, args.fractions, seeds,
                       cfg.train, cfg.loss, cfg.augment, cfg.run.tile, cfg.run.threshold)
    artefatos = write_fewshot_csv(runs, cfg.out_dir)
    if args.xlsx:
        artefatos.append(export_fewshot_xlsx(runs, cfg.out_dir / 'fewshot.xlsx'))

    print(f"{'fração':>8} {'init':<8} {'F1 médio':>9} {'desvio':>8}")
    for fraction, init, _, mean, std in summarize(runs):
        print(f"{fraction:>8.2f} {init:<8} {mean:>9.4f} {std:>8.4f}")
    return artefatos, {'runs': len(runs), 'fractions': list(args.fractions), 'seeds': seeds}


COMMANDS = {
    'synth': cmd_synth,
    'pretrain': cmd_pretrain,
    'inflate': cmd_inflate,
    'train': cmd_train,
    'eval': cmd_eval,
    'predict': cmd_predict,
    'analyze': cmd_analyze,
    'fewshot': cmd_fewshot,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(argv)
    if args.verbose:
        set_console_level(system_logger, logging.INFO)

    inicio = datetime.now()
    cfg: Optional[RunConfig] = None
    try:
        cfg = resolve_run_config(args.command, cli_overrides(args), args.config, args.out)
        cfg.out_dir.mkdir(parents=True, exist_ok=True)
        cfg.save()
        log_run_event(logger, args.command, 'início', f"saída={cfg.out_dir} semente={cfg.seed}")
        artefatos, detalhes = COMMANDS[args.command](args, cfg)
    except SChangerError as e:
        logger.error(f"Comando {args.command} falhou: {e}")
        print(f"[Erro] {e}", file=sys.stderr)
        if cfg is not None:
            registrar_execucao(cfg.out_dir, args.command, argv, cfg.seed, detalhes={'erro': str(e)},
                               inicio=inicio, status=type(e).__name__)
        return e.exit_code
    except Exception as e:
        logger.error(f"Comando {args.command} abortado por erro inesperado: {e}", exc_info=True)
        if cfg is not None:
            registrar_execucao(cfg.out_dir, args.command, argv, cfg.seed,
                               detalhes={'erro': str(e), 'inesperado': True},
                               inicio=inicio, status=type(e).__name__)
        raise

    registrar_execucao(cfg.out_dir, args.command, argv, cfg.seed, artefatos, detalhes, inicio)
    log_run_event(logger, args.command, 'concluído', f"{len(artefatos)} artefato(s)")
    return 0


if __name__ == "__main__":
    sys.exit(main())
