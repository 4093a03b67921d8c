"""Command-line entry point.

Subcommands: summarize, concord, shape, correlate, distill-demo, report.
Exit codes: 0 success, 1 usage error, 2 data/validation error, 3 internal
error. Failures print one JSON object per line on stderr so wrappers can
parse them. All outputs are deterministic for identical inputs and seeds;
CSV rendering is delegated to the render module, which the report
subcommand shares with the standalone subcommands.

LOSSDIAG_THREADS caps the worker threads used when summarizing several
checkpoints (default: one thread per checkpoint, at most 8).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import render
from .concordance import ConcordanceReport, concordance
from .correlate import MetricSeries, crossing_step, default_rules, percentile_sweep, select
from .distill import (
    LabConfig,
    chain_fidelity,
    dose_response,
    next_token_accuracy,
    per_token_ce,
    true_chain,
)
from .errors import DivergenceError, UsageError, ValidationError
from .quantiles import (
    DEFAULT_KS,
    EXACT_PATH_MAX,
    SummarySet,
    summarize_chunks,
    summarize_exact,
)
from .shape import (
    DEFAULT_BAND_BOUNDS,
    PROFILE_GRID,
    band_masses,
    standardize_profile,
)
from .store import (
    CheckpointMeta,
    LossVector,
    Manifest,
    dump_manifest,
    iter_loss_chunks,
    load_manifest,
    peek_dump_count,
    read_loss_dump,
    read_metric_file,
    write_loss_dump,
)


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 on bad flags; our contract reserves 2 for
    # data errors, so route parse failures through UsageError instead.
    def error(self, message):
        raise UsageError(message)


def _int_list(text: str) -> list[int]:
    try:
        return [int(part) for part in text.split(",") if part]
    except ValueError as exc:
        raise UsageError(f"bad integer list {text!r}") from exc


def _float_list(text: str) -> list[float]:
    try:
        return [float(part) for part in text.split(",") if part]
    except ValueError as exc:
        raise UsageError(f"bad float list {text!r}") from exc


def _str_list(text: str) -> list[str]:
    return [part.strip() for part in text.split(",") if part.strip()]


def _thread_count(n_tasks: int) -> int:
    raw = os.environ.get("LOSSDIAG_THREADS", "")
    if raw:
        try:
            limit = int(raw)
        except ValueError as exc:
            raise UsageError(f"LOSSDIAG_THREADS must be an integer, got {raw!r}") from exc
        if limit < 1:
            raise UsageError("LOSSDIAG_THREADS must be >= 1")
    else:
        limit = 8
    return max(1, min(limit, n_tasks))


def _summarize_dump(
    path: Path,
    checkpoint_id: str,
    ks,
    mode: str = "auto",
    epsilon: float = 1e-3,
) -> SummarySet:
    """Summary of one dump; switches to the sketch past EXACT_PATH_MAX."""
    count = peek_dump_count(path)
    exact = mode == "exact" or (mode == "auto" and count <= EXACT_PATH_MAX)
    if exact:
        return summarize_exact(read_loss_dump(path, checkpoint_id), ks)
    return summarize_chunks(checkpoint_id, iter_loss_chunks(path), ks, epsilon)


def _summarize_many(entries, ks, mode="auto", epsilon=1e-3) -> list[SummarySet]:
    """Summaries for (path, checkpoint_id) pairs, order-preserving."""
    entries = list(entries)
    workers = _thread_count(len(entries))
    if workers == 1:
        return [_summarize_dump(p, cid, ks, mode, epsilon) for p, cid in entries]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(_summarize_dump, p, cid, ks, mode, epsilon) for p, cid in entries]
        return [f.result() for f in futures]


def _write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def _emit(text: str, out: str | None) -> None:
    if out is None:
        sys.stdout.write(text)
    else:
        _write_text(Path(out), text)


def _manifest_entries(manifest: Manifest, families) -> list[tuple[Path, str]]:
    selected = manifest.select(families)
    if not selected:
        raise ValidationError("manifest selection is empty")
    return [(c.loss_path, c.checkpoint_id) for c in selected]


def _metric_series(
    manifest: Manifest, name: str, metric_file: str | None, families=None
) -> MetricSeries:
    if metric_file is not None:
        return MetricSeries(name, read_metric_file(metric_file))
    values = {
        c.checkpoint_id: c.metrics[name]
        for c in manifest.select(families)
        if name in c.metrics
    }
    if not values:
        raise ValidationError(f"no checkpoint carries metric {name!r}")
    return MetricSeries(name, values)


# --- summarize ---------------------------------------------------------


def _cmd_summarize(args) -> None:
    entries: list[tuple[Path, str]] = [(Path(p), Path(p).stem) for p in args.paths]
    if args.manifest:
        manifest = load_manifest(args.manifest)
        entries.extend(_manifest_entries(manifest, args.family))
    elif args.family:
        raise UsageError("--family requires --manifest")
    if not entries:
        raise UsageError("give dump paths and/or --manifest")
    mode = "exact" if args.exact else "sketch" if args.sketch else "auto"
    summaries = _summarize_many(entries, tuple(args.ks), mode, args.epsilon)
    _emit(render.summary_table(summaries, args.precision), args.out)


# --- concord -----------------------------------------------------------


def _family_summary_map(
    manifest: Manifest, family: str, ks
) -> dict[str, SummarySet]:
    entries = _manifest_entries(manifest, [family])
    return {s.checkpoint_id: s for s in _summarize_many(entries, ks)}


def _concordance_reports(
    manifest: Manifest, families, summaries, ks
) -> list[ConcordanceReport]:
    reports = []
    for family in families:
        table = _family_summary_map(manifest, family, ks)
        reports.append(concordance(table, summaries, family=family))
    return reports


def _families_with_pairs(manifest: Manifest) -> list[str]:
    counts: dict[str, int] = {}
    for c in manifest.checkpoints:
        counts[c.family] = counts.get(c.family, 0) + 1
    return [f for f in manifest.families() if counts[f] >= 2]


def _cmd_concord(args) -> None:
    if len(args.summaries) < 2:
        raise UsageError("--summaries needs at least two names")
    manifest = load_manifest(args.manifest)
    families = args.family or _families_with_pairs(manifest)
    if not families:
        raise ValidationError("no family holds two or more checkpoints")
    reports = _concordance_reports(manifest, families, args.summaries, tuple(args.ks))
    _emit(render.concordance_table(reports, args.precision), args.out)


# --- shape -------------------------------------------------------------


def _shape_tables(manifest: Manifest, families, grid, bounds, precision):
    """The four shape CSVs: profiles, distances, bands, per-family stats."""
    selected = manifest.select(families)
    if not selected:
        raise ValidationError("manifest selection is empty")
    entries = [(c.loss_path, c.checkpoint_id) for c in selected]
    summaries = _summarize_many(entries, grid)
    profiles = [standardize_profile(s, grid) for s in summaries]
    bands = [
        band_masses(read_loss_dump(c.loss_path, c.checkpoint_id), bounds)
        for c in selected
    ]
    by_family: dict[str, list[float]] = {}
    for c, p in zip(selected, profiles):
        by_family.setdefault(c.family, []).append(p.values[95])
    stats = []
    for fam in sorted(by_family):
        tails = np.array(by_family[fam])
        stats.append((fam, tails.size, float(tails.mean()), float(tails.std())))
    return {
        "profiles.csv": render.profile_table(profiles, precision),
        "distances.csv": render.distance_table(profiles, precision),
        "bands.csv": render.band_table(bands, precision),
        "family_stats.csv": render.family_stats_table(stats, precision),
    }


_SHAPE_TITLES = {
    "profiles.csv": "Standardized percentile profiles",
    "distances.csv": "Profile distances",
    "bands.csv": "Loss-band mass",
    "family_stats.csv": "Per-family tail statistics",
}


def _cmd_shape(args) -> None:
    manifest = load_manifest(args.manifest)
    grid = tuple(args.grid)
    for needed in (25, 50, 75):
        if needed not in grid:
            raise UsageError(f"--grid must include {needed}")
    tables = _shape_tables(
        manifest, args.family, grid, tuple(args.bands), args.precision
    )
    if args.out_dir is None:
        for name, text in tables.items():
            sys.stdout.write(render.markdown_section(_SHAPE_TITLES[name], text))
        return
    out_dir = Path(args.out_dir)
    for name, text in tables.items():
        _write_text(out_dir / name, text)
        print(out_dir / name)


# --- correlate ---------------------------------------------------------


def _cmd_correlate(args) -> None:
    modes = [bool(args.sweep), args.select is not None, bool(args.crossing)]
    if sum(modes) != 1:
        raise UsageError("pick exactly one of --sweep, --select, --crossing")
    manifest = load_manifest(args.manifest)

    if args.sweep:
        if not args.metric:
            raise UsageError("--sweep requires --metric")
        entries = _manifest_entries(manifest, args.family)
        table = {s.checkpoint_id: s for s in _summarize_many(entries, tuple(args.ks))}
        metric = _metric_series(manifest, args.metric, args.metric_file, args.family)
        rows = percentile_sweep(table, metric)
        _emit(render.sweep_table(rows, args.precision), args.out)
        return

    if args.select is not None:
        if not args.select:
            raise UsageError("--select needs at least one column")
        entries = _manifest_entries(manifest, args.family)
        table = {s.checkpoint_id: s for s in _summarize_many(entries, tuple(args.ks))}
        metric_names = sorted(
            {name for c in manifest.select(args.family) for name in c.metrics}
        )
        metrics = {
            name: _metric_series(manifest, name, None, args.family)
            for name in metric_names
            if name in args.select
        }
        rules = default_rules(args.select, metric_names)
        result = select(table, rules, metrics)
        _emit(render.selection_table(result, args.precision), args.out)
        return

    if args.reference is None:
        raise UsageError("--crossing requires --reference")
    families = args.family or manifest.families()
    entries_rows = []
    for family in families:
        selected = manifest.select([family])
        summaries = _summarize_many(
            [(c.loss_path, c.checkpoint_id) for c in selected], tuple(args.ks)
        )
        series = [
            (c.step, s.value(args.summary)) for c, s in zip(selected, summaries)
        ]
        step = crossing_step(series, args.reference)
        entries_rows.append((family, args.summary, args.reference, step))
    _emit(render.crossing_table(entries_rows, args.precision), args.out)


# --- distill-demo ------------------------------------------------------


def _parse_k_list(text: str) -> tuple:
    ks: list = []
    for part in _str_list(text):
        if part == "full":
            ks.append("full")
            continue
        try:
            ks.append(int(part))
        except ValueError as exc:
            raise UsageError(f"bad K value {part!r}") from exc
    if not ks:
        raise UsageError("--k needs at least one value")
    return tuple(ks)


def _cmd_distill_demo(args) -> None:
    config = LabConfig(
        vocab=args.vocab,
        zipf_exponent=args.zipf,
        length=args.length,
        alpha=args.alpha,
        ks=_parse_k_list(args.k),
        steps=args.steps,
        learning_rate=args.lr,
        concentration=args.concentration,
        eval_length=args.eval_length,
        epsilon_q=args.epsilon_q,
        seed=args.seed,
    )
    result = dose_response(config)

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    _write_text(out, render.dose_table(result.rows, args.precision))
    print(out)

    # CE dumps plus a manifest so every other subcommand can run on the
    # lab's outputs: the teacher under family "teacher", trained students
    # under "trained", converged floors under "oracle". Metrics: accuracy
    # (constant across students of one teacher, by construction) and
    # fidelity against the generating chain (varies with K), the lab's
    # external-judge analogue.
    dump_dir = out.parent / "dumps"
    dump_dir.mkdir(parents=True, exist_ok=True)
    eval_stream = result.eval_stream
    _, truth = true_chain(
        config.seed, config.vocab, config.zipf_exponent, config.concentration
    )
    checkpoints = []

    def add(checkpoint_id, family, step, objective, model):
        ce = per_token_ce(model, eval_stream).astype(np.float32)
        path = (dump_dir / f"{checkpoint_id}.bin").resolve()
        write_loss_dump(LossVector(checkpoint_id, ce), path)
        checkpoints.append(
            CheckpointMeta(
                checkpoint_id=checkpoint_id,
                family=family,
                step=step,
                objective=objective,
                loss_path=path,
                metrics={
                    "accuracy": next_token_accuracy(model, eval_stream),
                    "fidelity": chain_fidelity(model, truth),
                },
            )
        )

    add("teacher", "teacher", 0, "token-ce", result.teacher)
    for k in config.ks:
        label = "full" if k == "full" else str(int(k))
        objective = f"topk-kl:{label}"
        add(f"student-k{label}-trained", "trained", config.steps, objective, result.students[k])
        add(f"student-k{label}-oracle", "oracle", 0, objective, result.oracles[k])

    manifest_path = out.parent / "manifest.yaml"
    dump_manifest(Manifest(version=1, checkpoints=tuple(checkpoints)), manifest_path)
    print(manifest_path)


# --- report ------------------------------------------------------------

_FORMATS = ("csv", "md", "svg")


@dataclass(frozen=True)
class ReportConfig:
    """Everything the report subcommand needs, validated up front."""

    manifest_path: Path
    out_dir: Path
    families: tuple[str, ...] | None = None
    summaries: tuple[str, ...] = ("mean", "median", "p95")
    grid: tuple[int, ...] = PROFILE_GRID
    band_bounds: tuple[float, ...] = DEFAULT_BAND_BOUNDS
    formats: tuple[str, ...] = _FORMATS
    metric: str | None = None
    precision: int = render.DEFAULT_PRECISION

    def __post_init__(self):
        if len(self.summaries) < 2:
            raise UsageError("report needs at least two summary names")
        bad = [f for f in self.formats if f not in _FORMATS]
        if bad:
            raise UsageError(f"unknown format(s) {bad}; choose from {_FORMATS}")
        for needed in (25, 50, 75):
            if needed not in self.grid:
                raise UsageError(f"profile grid must include {needed}")


def _report_sections(config: ReportConfig) -> dict[str, str]:
    """All report CSVs, keyed by file name.

    Each value comes from the same module calls and render functions the
    standalone subcommands use, so the bytes match exactly.
    """
    manifest = load_manifest(config.manifest_path)
    selected = manifest.select(config.families)
    if not selected:
        raise ValidationError("manifest selection is empty")
    entries = [(c.loss_path, c.checkpoint_id) for c in selected]

    sections: dict[str, str] = {}
    summaries = _summarize_many(entries, DEFAULT_KS)
    sections["summary.csv"] = render.summary_table(summaries, config.precision)

    families = [
        f
        for f in _families_with_pairs(manifest)
        if config.families is None or f in config.families
    ]
    if families:
        reports = _concordance_reports(
            manifest, families, config.summaries, DEFAULT_KS
        )
        sections["concordance.csv"] = render.concordance_table(
            reports, config.precision
        )

    table = {s.checkpoint_id: s for s in summaries}
    metric_names = sorted({name for c in selected for name in c.metrics})
    columns = list(config.summaries)
    if config.metric is not None:
        columns.append(config.metric)
    metrics = {
        name: _metric_series(manifest, name, None, config.families)
        for name in metric_names
        if name in columns
    }
    rules = default_rules(columns, metric_names)
    sections["selection.csv"] = render.selection_table(
        select(table, rules, metrics), config.precision
    )

    if config.metric is not None and len(table) >= 3:
        metric = _metric_series(manifest, config.metric, None, config.families)
        sweep_rows = percentile_sweep(table, metric)
        sections["sweep.csv"] = render.sweep_table(sweep_rows, config.precision)

    sections.update(
        _shape_tables(
            manifest, config.families, config.grid, config.band_bounds, config.precision
        )
    )
    return sections


_REPORT_TITLES = {
    "summary.csv": "Checkpoint summaries",
    "concordance.csv": "Summary concordance per family",
    "selection.csv": "Checkpoint selection",
    "sweep.csv": "Percentile correlation sweep",
    **_SHAPE_TITLES,
}

_REPORT_ORDER = (
    "summary.csv",
    "concordance.csv",
    "selection.csv",
    "sweep.csv",
    "profiles.csv",
    "distances.csv",
    "bands.csv",
    "family_stats.csv",
)


def _report_charts(sections: dict[str, str]) -> dict[str, str]:
    charts: dict[str, str] = {}
    if "sweep.csv" in sections:
        lines = sections["sweep.csv"].splitlines()[1:]
        ks, rs, rhos = [], [], []
        for line in lines:
            name, r, rho = line.split(",")
            if name == "mean":
                continue
            ks.append(float(name[1:]))
            rs.append(float(r))
            rhos.append(float(rho))
        if ks:
            charts["sweep.svg"] = render.svg_chart(
                [("pearson_r", ks, rs), ("spearman_rho", ks, rhos)],
                x_label="percentile",
                y_label="correlation with metric",
                kind="line",
            )
    lines = sections["summary.csv"].splitlines()
    header = lines[0].split(",")
    mean_i, med_i = header.index("mean"), header.index("p50")
    meds, means = [], []
    for line in lines[1:]:
        cells = line.split(",")
        x, y = float(cells[med_i]), float(cells[mean_i])
        if np.isfinite(x) and np.isfinite(y):
            meds.append(x)
            means.append(y)
    if len(meds) >= 2:
        charts["scatter.svg"] = render.svg_chart(
            [("checkpoints", meds, means)],
            x_label="median CE",
            y_label="mean CE",
            kind="scatter",
        )
    return charts


def _cmd_report(args) -> None:
    config = ReportConfig(
        manifest_path=Path(args.manifest),
        out_dir=Path(args.out_dir),
        families=tuple(args.family) if args.family else None,
        summaries=tuple(args.summaries),
        grid=tuple(args.grid),
        band_bounds=tuple(args.bands),
        formats=tuple(args.formats),
        metric=args.metric,
        precision=args.precision,
    )
    sections = _report_sections(config)
    config.out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    if "csv" in config.formats:
        for name in _REPORT_ORDER:
            if name in sections:
                _write_text(config.out_dir / name, sections[name])
                written.append(config.out_dir / name)
    if "md" in config.formats:
        doc = render.markdown_report(
            "Loss diagnostics report",
            [
                (_REPORT_TITLES[name], sections[name])
                for name in _REPORT_ORDER
                if name in sections
            ],
        )
        _write_text(config.out_dir / "report.md", doc)
        written.append(config.out_dir / "report.md")
    if "svg" in config.formats:
        for name, svg in sorted(_report_charts(sections).items()):
            _write_text(config.out_dir / name, svg)
            written.append(config.out_dir / name)
    for path in written:
        print(path)


# --- parser ------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="lossdiag", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", metavar="subcommand")

    def common(p):
        p.add_argument("--precision", type=int, default=render.DEFAULT_PRECISION,
                       help="significant digits in rendered floats")
        p.add_argument("--out", default=None, help="write CSV here instead of stdout")

    p = sub.add_parser("summarize", help="mean/percentile summaries of loss dumps")
    p.add_argument("paths", nargs="*", help="loss dump files")
    p.add_argument("--manifest", default=None)
    p.add_argument("--family", type=_str_list, default=None,
                   help="comma-separated family tags (with --manifest)")
    p.add_argument("--ks", type=_int_list, default=list(DEFAULT_KS),
                   help="percentiles to report")
    p.add_argument("--exact", action="store_true", help="force the exact path")
    p.add_argument("--sketch", action="store_true", help="force the sketch path")
    p.add_argument("--epsilon", type=float, default=1e-3,
                   help="sketch rank-error budget")
    common(p)
    p.set_defaults(func=_cmd_summarize)

    p = sub.add_parser("concord", help="summary concordance across checkpoints")
    p.add_argument("--manifest", required=True)
    p.add_argument("--family", type=_str_list, default=None)
    p.add_argument("--summaries", type=_str_list, default=["mean", "median", "p95"])
    p.add_argument("--ks", type=_int_list, default=list(DEFAULT_KS))
    common(p)
    p.set_defaults(func=_cmd_concord)

    p = sub.add_parser("shape", help="standardized profiles and band tables")
    p.add_argument("--manifest", required=True)
    p.add_argument("--family", type=_str_list, default=None)
    p.add_argument("--grid", type=_int_list, default=list(PROFILE_GRID))
    p.add_argument("--bands", type=_float_list, default=list(DEFAULT_BAND_BOUNDS))
    p.add_argument("--out-dir", default=None, help="write the four CSVs here")
    p.add_argument("--precision", type=int, default=render.DEFAULT_PRECISION)
    p.set_defaults(func=_cmd_shape)

    p = sub.add_parser("correlate", help="summary-vs-metric relationships")
    p.add_argument("--manifest", required=True)
    p.add_argument("--family", type=_str_list, default=None)
    p.add_argument("--sweep", action="store_true",
                   help="correlate every summary against --metric")
    p.add_argument("--select", type=_str_list, default=None,
                   help="pick best checkpoints by these columns")
    p.add_argument("--crossing", action="store_true",
                   help="first step a summary drops below --reference")
    p.add_argument("--metric", default=None)
    p.add_argument("--metric-file", default=None,
                   help="two-column checkpoint_id,value file overriding manifest metrics")
    p.add_argument("--summary", default="median", help="summary used by --crossing")
    p.add_argument("--reference", type=float, default=None)
    p.add_argument("--ks", type=_int_list, default=list(DEFAULT_KS))
    common(p)
    p.set_defaults(func=_cmd_correlate)

    lab = LabConfig()
    p = sub.add_parser("distill-demo", help="synthetic top-K distillation lab")
    p.add_argument("--vocab", type=int, default=lab.vocab)
    p.add_argument("--zipf", type=float, default=lab.zipf_exponent)
    p.add_argument("--length", type=int, default=lab.length)
    p.add_argument("--alpha", type=float, default=lab.alpha)
    p.add_argument("--k", default="2,4,8,16,full",
                   help="comma-separated truncation levels; include full")
    p.add_argument("--steps", type=int, default=lab.steps)
    p.add_argument("--lr", type=float, default=lab.learning_rate)
    p.add_argument("--seed", type=int, default=lab.seed)
    p.add_argument("--concentration", type=float, default=lab.concentration)
    p.add_argument("--eval-length", type=int, default=lab.eval_length)
    p.add_argument("--epsilon-q", type=float, default=lab.epsilon_q)
    p.add_argument("--out", required=True, help="dose-response CSV path")
    p.add_argument("--precision", type=int, default=render.DEFAULT_PRECISION)
    p.set_defaults(func=_cmd_distill_demo)

    p = sub.add_parser("report", help="all analyses in one document")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--family", type=_str_list, default=None)
    p.add_argument("--summaries", type=_str_list, default=["mean", "median", "p95"])
    p.add_argument("--metric", default=None)
    p.add_argument("--grid", type=_int_list, default=list(PROFILE_GRID))
    p.add_argument("--bands", type=_float_list, default=list(DEFAULT_BAND_BOUNDS))
    p.add_argument("--formats", type=_str_list, default=list(_FORMATS))
    p.add_argument("--precision", type=int, default=render.DEFAULT_PRECISION)
    p.set_defaults(func=_cmd_report)

    return parser


def _fail(exc: BaseException, code: int) -> int:
    line = json.dumps(
        {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
    )
    print(line, file=sys.stderr)
    return code


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if getattr(args, "command", None) is None:
            raise UsageError("a subcommand is required (see --help)")
        args.func(args)
        return 0
    except UsageError as exc:
        return _fail(exc, 1)
    except (ValidationError, DivergenceError, OSError) as exc:
        return _fail(exc, 2)
    except KeyboardInterrupt:
        raise
    except Exception as exc:  # anything unplanned is an internal error
        return _fail(exc, 3)


if __name__ == "__main__":
    sys.exit(main())
