"""
The experiment set. Each experiment builds an ExperimentReport from a
Workbench; run_experiment writes it out with its manifest.
"""
import logging

import numpy as np
from scipy.stats import pearsonr

from src.services.attack_service.sweep import run_attack_sweep
from src.services.attack_service.whitebox import evaluate_transfer
from src.services.model_zoo_service.split import split_at
from src.services.model_zoo_service.training import evaluate_accuracy
from src.services.shape_service.estimator import estimate_from_matrix
from src.services.shape_service.probes import probe_capture
from src.services.wire_service.deployment import SimulatedDeployment
from src.shared.decorators import log_action
from src.shared.exceptions import InvalidConfig, SplitLeakError
from src.shared.utils import derive_seed, safe_mean

from .pipeline import Workbench, block_of, feedback_mode
from .plots import heat_grid, line_plot, scatter_plot
from .reports import ExperimentReport, Table, image_grid, write_reports

logger = logging.getLogger(__name__)

EXPERIMENTS = {}
RGF_METHODS = {'rgf', 'p-rgf', 'ods-rgf'}
PGD_NORMS = (('inf', 'pgd_linf_eps'), ('2', 'pgd_l2_eps'))
PROBE_SPLIT = 3  # conv, relu, conv


def experiment(name):
    def register(func):
        EXPERIMENTS[name] = func
        return func
    return register


def _fd_label(fd):
    return 'FD' if fd else 'no-FD'


def _query_cells(cfg, methods):
    """(method, mode) pairs a query attack can run on; gradient estimation needs scores"""
    cells = []
    for method in methods:
        if method == 'pgd':
            logger.warning('pgd is not a query attack; skipped')
            continue
        for mode in cfg.modes:
            if method in RGF_METHODS and feedback_mode(mode) != 'score':
                logger.warning(f"{method} needs score feedback; skipped for {mode} mode")
                continue
            cells.append((method, mode))
    if not cells:
        raise InvalidConfig('No configured (method, mode) pair can run a query attack')
    return cells


def _placement(wb, preset):
    tsplit = wb.default_target_split(preset)
    return tsplit, wb.matched_surrogate_split(preset, tsplit)


@experiment('sr-vs-queries')
def sr_vs_queries(cfg, wb):
    preset = cfg.target_presets[0]
    tsplit, ssplit = _placement(wb, preset)
    dataset = wb.attack_set()
    budgets = sorted(set(cfg.query_budgets))
    table = Table('sr-vs-queries', ['method', 'mode', 'fd', 'query_budget', 'sr'])
    series = {}

    for method, mode in _query_cells(cfg, cfg.methods):
        for fd in (True, False):
            surrogate = wb.surrogate(preset, tsplit, ssplit, mode, fd, alpha=cfg.query_alpha)
            attack_cfg = wb.attack_config(
                method=method, norm='2', eps=cfg.sr_eps, query_budget=budgets[-1], feedback=feedback_mode(mode),
            )
            sweep = run_attack_sweep(method, wb.oracle(preset, tsplit, mode), surrogate, dataset, attack_cfg)
            curve = [(budget, sweep.sr_at_budget(budget)) for budget in budgets]
            for budget, sr in curve:
                table.add(method=method, mode=mode, fd=fd, query_budget=budget, sr=sr)
            series[f"{method} {mode} {_fd_label(fd)}"] = curve

    chart = line_plot(f"SR vs queries ({preset}, eps={cfg.sr_eps})", series, 'query budget', 'success rate', log_x=True)
    return ExperimentReport(
        'sr-vs-queries', [table], {'sr-vs-queries': chart},
        summary={'target': preset, 'tsplit': tsplit, 'ssplit': ssplit},
    )


@experiment('eps-table')
def eps_table(cfg, wb):
    table = Table('eps-table', ['model', 'eps', 'mode', 'fd', 'sr', 'avg_queries'])
    charts = {}
    dataset = wb.attack_set()
    for preset in cfg.target_presets:
        tsplit, ssplit = _placement(wb, preset)
        series = {}
        for method, mode in _query_cells(cfg, [cfg.eps_method]):
            for fd in (True, False):
                surrogate = wb.surrogate(preset, tsplit, ssplit, mode, fd, alpha=cfg.query_alpha)
                curve = []
                for eps in cfg.eps_grid:
                    attack_cfg = wb.attack_config(method=method, norm='2', eps=eps, feedback=feedback_mode(mode))
                    summary = run_attack_sweep(
                        method, wb.oracle(preset, tsplit, mode), surrogate, dataset, attack_cfg,
                    ).summary()
                    table.add(model=preset, eps=eps, mode=mode, fd=fd, sr=summary.success_rate,
                              avg_queries=summary.avg_queries)
                    curve.append((eps, summary.success_rate))
                series[f"{mode} {_fd_label(fd)}"] = curve
        charts[f"eps-table-{preset}"] = line_plot(
            f"{cfg.eps_method} SR vs l2 radius ({preset})", series, 'eps', 'success rate',
        )
    return ExperimentReport('eps-table', [table], charts, summary={'method': cfg.eps_method})


@experiment('unbounded')
def unbounded(cfg, wb):
    table = Table('unbounded', ['model', 'method', 'mode', 'fd', 'sr', 'avg_pert_l2', 'avg_queries'])
    images = {}
    dataset = wb.attack_set()
    index = {sample_id: i for i, sample_id in enumerate(dataset.ids)}
    for preset in cfg.target_presets:
        tsplit, ssplit = _placement(wb, preset)
        for method, mode in _query_cells(cfg, cfg.methods):
            for fd in (True, False):
                surrogate = wb.surrogate(preset, tsplit, ssplit, mode, fd, alpha=cfg.query_alpha)
                attack_cfg = wb.attack_config(
                    method=method, norm='2', eps='inf', query_budget=cfg.unbounded_query_budget,
                    feedback=feedback_mode(mode),
                )
                sweep = run_attack_sweep(method, wb.oracle(preset, tsplit, mode), surrogate, dataset, attack_cfg)
                summary = sweep.summary()
                table.add(model=preset, method=method, mode=mode, fd=fd, sr=summary.success_rate,
                          avg_pert_l2=summary.avg_l2, avg_queries=summary.avg_queries)
                if fd and mode == cfg.modes[0]:
                    wins = [r for r in sweep.results if r.success][:cfg.dump_samples]
                    for r in wins:
                        clean = dataset.images[index[r.sample_id]]
                        adversarial = r.adversarial[0]
                        amplified = (0.5 + 10.0 * (adversarial - clean)).clamp(0.0, 1.0)
                        images[f"unbounded-{preset}-{method}-{r.sample_id}"] = image_grid(
                            [clean.numpy(), adversarial.numpy(), amplified.numpy()]
                        )
    return ExperimentReport(
        'unbounded', [table], images=images,
        summary={'query_budget': cfg.unbounded_query_budget, 'dumps': len(images)},
    )


def _fd_grid(wb, preset, attack_cfg, mode):
    """(tsplit, ssplit, sr_fd, sr_nofd, clean_acc) for every pair of split positions"""
    target = wb.target(preset)
    dataset = wb.attack_set()
    ssplits = wb.surrogate_splits()
    rows = []
    for tsplit in wb.target_splits(preset):
        baseline = wb.surrogate(preset, tsplit, ssplits[0], mode, fd=False)
        sr_nofd = wb.transfer(target, baseline, dataset, attack_cfg)
        for ssplit in ssplits:
            surrogate = wb.surrogate(preset, tsplit, ssplit, mode, fd=True)
            sr_fd = wb.transfer(target, surrogate, dataset, attack_cfg)
            rows.append((tsplit, ssplit, sr_fd, sr_nofd, evaluate_accuracy(surrogate, dataset)))
    return rows


def _pgd_config(cfg, wb, norm):
    key = dict(PGD_NORMS)[norm]
    return wb.attack_config(method='pgd', norm=norm, eps=getattr(cfg, key))


def _norm_label(norm):
    return 'linf' if norm == 'inf' else 'l2'


@experiment('split-matrix')
def split_matrix(cfg, wb):
    preset = cfg.target_presets[0]
    mode = cfg.modes[0]
    target_spec, backbone = wb.target_spec(preset), wb.backbone_spec()
    tables, charts, summary = [], {}, {}
    for norm, _ in PGD_NORMS:
        label = _norm_label(norm)
        table = Table(f"split-matrix-{label}", ['tsplit', 'ssplit', 'sr_fd', 'sr_nofd', 'delta', 'clean_acc'])
        rows = _fd_grid(wb, preset, _pgd_config(cfg, wb, norm), mode)
        for tsplit, ssplit, sr_fd, sr_nofd, clean_acc in rows:
            delta = None if sr_fd is None or sr_nofd is None else sr_fd - sr_nofd
            table.add(tsplit=tsplit, ssplit=ssplit, sr_fd=sr_fd, sr_nofd=sr_nofd, delta=delta, clean_acc=clean_acc)
        tables.append(table)

        tsplits = list(dict.fromkeys(r[0] for r in rows))
        ssplits = list(dict.fromkeys(r[1] for r in rows))
        deltas = {(r['tsplit'], r['ssplit']): r['delta'] for r in table.rows}
        charts[table.name] = heat_grid(
            f"SR(FD) - SR(no-FD), PGD {label} ({preset} vs {backbone.name})",
            [str(t) for t in tsplits], [str(s) for s in ssplits],
            [[deltas[(t, s)] for s in ssplits] for t in tsplits],
            'surrogate split', 'target split',
        )
        # Reported, not enforced: the best FD surrogate sits near the matched depth
        near = {}
        for t in tsplits:
            scored = [r for r in rows if r[0] == t and r[2] is not None]
            if scored:
                best = max(scored, key=lambda r: r[2])[1]
                near[str(t)] = abs(block_of(backbone, best) - block_of(target_spec, t)) <= 1
        summary[f"{label}_best_near_matched_depth"] = near
    return ExperimentReport('split-matrix', tables, charts, summary={'target': preset, 'mode': mode, **summary})


def pearson(xs, ys):
    """Pearson r, or None when it is undefined (fewer than two points or a constant column)"""
    pairs = [(x, y) for x, y in zip(xs, ys) if x is not None and y is not None]
    if len(pairs) < 2:
        return None
    x, y = np.array(pairs, dtype=np.float64).T
    if np.ptp(x) == 0 or np.ptp(y) == 0:
        return None
    return float(pearsonr(x, y)[0])


@experiment('cleanacc-corr')
def cleanacc_corr(cfg, wb):
    preset = cfg.target_presets[0]
    mode = cfg.modes[0]
    norm = PGD_NORMS[0][0]
    rows = _fd_grid(wb, preset, _pgd_config(cfg, wb, norm), mode)
    points = Table('cleanacc-corr', ['tsplit', 'ssplit', 'clean_acc', 'sr'])
    correlations = Table('cleanacc-corr-pearson', ['tsplit', 'points', 'pearson_r'])
    scatter, notes = [], []
    for tsplit in dict.fromkeys(r[0] for r in rows):
        group = [r for r in rows if r[0] == tsplit]
        for _, ssplit, sr_fd, _, clean_acc in group:
            points.add(tsplit=tsplit, ssplit=ssplit, clean_acc=clean_acc, sr=sr_fd)
            scatter.append((clean_acc, sr_fd, tsplit, f"tsplit {tsplit}, ssplit {ssplit}"))
        r = pearson([g[4] for g in group], [g[2] for g in group])
        correlations.add(tsplit=tsplit, points=len(group), pearson_r=r)
        notes.append((tsplit, f"tsplit {tsplit}: r = {'n/a' if r is None else f'{r:.2f}'}"))
    chart = scatter_plot(
        f"Transfer SR vs surrogate clean accuracy ({preset}, PGD {_norm_label(norm)})",
        scatter, 'surrogate clean accuracy', 'transfer success rate', notes=notes,
    )
    return ExperimentReport('cleanacc-corr', [points, correlations], {'cleanacc-corr': chart})


def _estimated_width(rows):
    try:
        return estimate_from_matrix(rows).width
    except SplitLeakError as e:
        logger.debug(f"Width estimation failed on {rows.shape[0]} rows: {e.error_code}")
        return None


def _profile_chart(name, rows):
    try:
        profile = estimate_from_matrix(rows).profile
    except SplitLeakError:
        return None
    norm = profile.normalized
    points = [(int(k), float(norm[k])) for k in profile.lags]
    lo, hi = min(v for _, v in points), max(v for _, v in points)
    return line_plot(f"Autocorrelation profile, {name}", {name: points}, 'lag k', 'R(k) / R(0)', y_range=(lo, hi))


def _preset_captures(wb, preset, count):
    """Sniffed features at every block boundary of a trained preset"""
    target = wb.target(preset)
    images = wb.splits['surrogate'].images[:count]
    for tsplit in target.spec.block_ends:
        split = split_at(target, tsplit)
        deployment = SimulatedDeployment(split, 'none', tap=True)
        client = deployment.open_session()
        try:
            for image in images:
                client.infer(image)
        finally:
            client.close()
        yield tsplit, split.feature_shape[2], deployment.sniffer.capture()


@experiment('shape-batch')
def shape_batch(cfg, wb):
    sizes = sorted(set(cfg.batch_sizes))
    table = Table('shape-batch', ['model', 'split', 'n', 'west', 'wtrue', 'correct'])
    charts = {}

    def record(model, split, capture, width):
        for n in sizes:
            west = _estimated_width(capture[:n])
            table.add(model=model, split=split, n=n, west=west, wtrue=width, correct=west == width)

    for run in range(cfg.shape_seeds):
        seed = derive_seed(cfg.seed, 'shape', run)
        for channels in cfg.shape_channels:
            for width in cfg.shape_widths:
                capture = probe_capture(channels, width, sizes[-1], seed)
                record(f"probe-c{channels}-s{run}", PROBE_SPLIT, capture, width)
                if run == 0:
                    name = f"shape-profile-c{channels}-w{width}"
                    chart = _profile_chart(f"C={channels}, W={width}, N={sizes[-1]}", capture)
                    if chart:
                        charts[name] = chart

    if cfg.shape_presets and len(wb.splits['surrogate']) < sizes[-1]:
        raise InvalidConfig(f"shape_presets needs surrogate_size >= {sizes[-1]}")
    for preset in cfg.shape_presets:
        for tsplit, width, capture in _preset_captures(wb, preset, sizes[-1]):
            record(preset, tsplit, capture, width)

    rates = Table('shape-batch-rate', ['n', 'rate'])
    for n in sizes:
        rates.add(n=n, rate=safe_mean([1.0 if row['correct'] else 0.0 for row in table.rows if row['n'] == n]))
    charts['shape-batch-rate'] = line_plot(
        'Width estimation correctness vs captured samples', {'correct rate': [(r['n'], r['rate']) for r in rates.rows]},
        'captured samples N', 'correct rate', log_x=True,
    )
    return ExperimentReport('shape-batch', [table, rates], charts, summary={'rates': {r['n']: r['rate'] for r in rates.rows}})


@experiment('pgd-transfer')
def pgd_transfer(cfg, wb):
    preset = cfg.target_presets[0]
    tsplit, ssplit = _placement(wb, preset)
    target = wb.target(preset)
    dataset = wb.attack_set()
    baseline_sr = evaluate_transfer(target, dataset.images, dataset.labels)
    table = Table('pgd-transfer', ['norm', 'eps', 'mode', 'fd', 'sr', 'baseline_sr'])
    for norm, key in PGD_NORMS:
        attack_cfg = _pgd_config(cfg, wb, norm)
        for mode in cfg.modes:
            for fd in (True, False):
                surrogate = wb.surrogate(preset, tsplit, ssplit, mode, fd)
                sr = wb.transfer(target, surrogate, dataset, attack_cfg)
                table.add(norm=_norm_label(norm), eps=getattr(cfg, key), mode=mode, fd=fd, sr=sr,
                          baseline_sr=baseline_sr)
    return ExperimentReport('pgd-transfer', [table], summary={'target': preset, 'tsplit': tsplit, 'ssplit': ssplit})


@log_action('run_experiment')
def run_experiment(cfg, out_dir, workbench=None):
    """Run one experiment end to end; artifacts are only written once every cell has finished"""
    if cfg.experiment not in EXPERIMENTS:
        raise InvalidConfig(f"Unknown experiment '{cfg.experiment}'")
    wb = workbench or Workbench(cfg)
    report = EXPERIMENTS[cfg.experiment](cfg, wb)
    paths = write_reports(report, out_dir, cfg)
    return report, paths

