""" Command line interface: ``comer gen | train | eval | visualize | ablate``.

Every command exits with 0 on success. Failures print a single line
  ``comer-error <code>: <message>`` to stderr and exit with 1 (2 for bad arguments).
"""
import argparse
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from multiprocessing import get_context
from pathlib import Path
from typing import Any, Dict, List, NamedTuple, Optional, Sequence

import numpy as np

from .config import COVERAGE_MODES, RunConfig, load_config
from .constants import THREADS_ENV_VAR, RunFiles
from .data.dataset import generate, split, statistics
from .data.io import read_corpus, read_pgm, write_corpus
from .data.vocab import Vocab
from .errors import ComerError, UsageError
from .metrics import evaluate, write_predictions
from .search import default_max_len
from .serializers import JsonSerializer, write_json_file
from .serializers.optional_module_utils import MISSING_PANDAS_MESSAGE, Pandas
from .training import load_run, train
from .visualize import visualize

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"
BLAS_ENV_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")
BASELINE = "none"
UNAUGMENTED = "none (no aug)"


class _Parser(argparse.ArgumentParser):
    """ArgumentParser reporting bad arguments in the single-line error format."""

    def error(self, message: str) -> None:  # type: ignore
        print(f"comer-error usage-error: {message}", file=sys.stderr)
        sys.exit(2)


def _coverage(value: str) -> str:
    if value not in COVERAGE_MODES:
        raise UsageError(
            f"Invalid coverage mode {value!r}; Expected one of: {', '.join(COVERAGE_MODES)}"
        )
    return value


def _config(args: argparse.Namespace, *overrides: str) -> RunConfig:
    return load_config(args.config, [*(args.set or []), *overrides])


def _print_json(obj: Any) -> None:
    print(json.dumps(obj, cls=JsonSerializer, indent=2))


# ===== gen =======================================================================


def cmd_gen(args: argparse.Namespace) -> None:
    """Generate a corpus directory and print its statistics."""
    overrides = list()
    if args.seed is not None:
        overrides.append(f"dataset.seed={args.seed}")
    if args.n is not None:
        overrides.append(f"dataset.n={args.n}")
    config = _config(args, *overrides)
    vocab = Vocab()
    samples = generate(config.dataset, vocab)
    write_corpus(samples, vocab, Path(args.out), force=args.force)
    stats = statistics(samples, config.search.long_threshold)
    logger.info(
        "Corpus of %d samples, %d of length >= %d",
        stats["count"],
        stats["long_count"],
        stats["long_threshold"],
    )
    _print_json(stats)


# ===== train =====================================================================


def cmd_train(args: argparse.Namespace) -> None:
    """Train one model on a corpus directory."""
    overrides = list()
    if args.coverage is not None:
        overrides.append(f"model.coverage={_coverage(args.coverage)}")
    if args.seed is not None:
        overrides.append(f"training.seed={args.seed}")
    config = _config(args, *overrides)
    if args.resume:
        # A resumed run keeps the configuration it was started with.
        config = RunConfig.from_toml(Path(args.out) / RunFiles.config)
        config = config.with_overrides(overrides)
    samples, vocab = read_corpus(Path(args.data))
    _, records = train(
        config, samples, out_dir=Path(args.out), vocab=vocab, resume=args.resume
    )
    if records:
        _print_json(records[-1])


# ===== eval ======================================================================


def cmd_eval(args: argparse.Namespace) -> None:
    """Evaluate a checkpoint on a corpus directory."""
    model, config, _ = load_run(Path(args.checkpoint))
    samples, vocab = read_corpus(Path(args.data))
    beam = args.beam if args.beam is not None else config.search.beam_size
    max_len = args.max_len or config.search.max_len
    max_len = max_len or default_max_len([sample.length for sample in samples])
    report, predictions = evaluate(
        model,
        samples,
        beam_size=beam,
        max_len=max_len,
        joint=config.search.joint and not args.no_joint,
        long_threshold=config.search.long_threshold,
    )
    if args.report:
        write_json_file(report, Path(args.report))
    if args.predictions:
        write_predictions(predictions, vocab, Path(args.predictions))
    _print_json(report)
    print(report.table())


# ===== visualize =================================================================


def cmd_visualize(args: argparse.Namespace) -> None:
    """Export refinement heatmaps of a greedy decode of one PGM image."""
    model, config, vocab = load_run(Path(args.checkpoint))
    image = read_pgm(Path(args.image))
    max_len = args.max_len or config.search.max_len
    max_len = max_len or default_max_len([config.dataset.max_length])
    summary = visualize(model, image, Path(args.out), vocab, max_len)
    _print_json({key: summary[key] for key in ("tokens", "steps", "attended_higher")})


# ===== ablate ====================================================================


class AblationCell(NamedTuple):
    """One (mode, seed) training and evaluation run of the ablation grid."""

    label: str
    mode: str
    seed: int
    augment: bool
    config: RunConfig
    data: Path
    test: Optional[Path]
    out_dir: Path


class CellResult(NamedTuple):
    label: str
    seed: int
    exprate: float
    long_exprate: Optional[float]


def run_cell(cell: AblationCell) -> CellResult:
    """Train one cell on its corpus and evaluate its best checkpoint."""
    config = cell.config.with_overrides(
        [
            f"model.coverage={cell.mode}",
            f"training.seed={cell.seed}",
            f"training.augment={str(cell.augment).lower()}",
        ]
    )
    samples, vocab = read_corpus(cell.data)
    train(config, samples, out_dir=cell.out_dir, vocab=vocab)
    if cell.test is not None:
        test, _ = read_corpus(cell.test)
    else:
        _, test = split(samples, config.training.val_fraction, config.training.seed)
    model, _, _ = load_run(cell.out_dir / RunFiles.best)
    lengths = [sample.length for sample in samples]
    report, _ = evaluate(
        model,
        test,
        beam_size=config.search.beam_size,
        max_len=config.search.max_len or default_max_len(lengths),
        joint=config.search.joint,
        long_threshold=config.search.long_threshold,
    )
    return CellResult(cell.label, cell.seed, report.exprate, report.long_exprate)


def ablation_cells(
    config: RunConfig,
    data: Path,
    test: Optional[Path],
    out: Path,
    seeds: int,
    unaugmented_baseline: bool = False,
) -> List[AblationCell]:
    """Every mode (and optionally the unaugmented baseline) for seeds ``0..seeds-1``."""
    runs = [(mode, mode, True) for mode in COVERAGE_MODES]
    if unaugmented_baseline:
        runs.append((UNAUGMENTED, BASELINE, False))
    cells = list()
    for label, mode, augment in runs:
        directory = "none-noaug" if label == UNAUGMENTED else mode
        for seed in range(seeds):
            cell_dir = out / directory / f"seed{seed}"
            cells.append(
                AblationCell(label, mode, seed, augment, config, data, test, cell_dir)
            )
    return cells


def _worker_count(cells: int, requested: Optional[int]) -> int:
    cap = os.environ.get(THREADS_ENV_VAR)
    limit = int(cap) if cap else (os.cpu_count() or 1)
    if requested is not None:
        limit = min(limit, requested)
    return max(1, min(cells, limit))


def run_cells(cells: Sequence[AblationCell], workers: int) -> List[CellResult]:
    """Run cells in worker processes; results keep the order of ``cells``."""
    if workers <= 1:
        return [run_cell(cell) for cell in cells]
    blas_threads = str(max(1, _worker_count(len(cells), None) // workers))
    # Spawned workers read these before numpy starts its BLAS thread pool.
    previous = {name: os.environ.get(name) for name in BLAS_ENV_VARS}
    os.environ.update({name: blas_threads for name in BLAS_ENV_VARS})
    try:
        with ProcessPoolExecutor(workers, mp_context=get_context("spawn")) as executor:
            return list(executor.map(run_cell, cells))
    finally:
        for name, value in previous.items():
            if value is None:
                os.environ.pop(name, None)
            else:
                os.environ[name] = value


def _mean(values: Sequence[Optional[float]]) -> Optional[float]:
    present = [value for value in values if value is not None]
    return float(np.mean(present)) if present else None


def _percent(value: Optional[float]) -> str:
    return "-" if value is None else f"{100 * value:.2f}"


def _delta(value: Optional[float], baseline: Optional[float]) -> str:
    if value is None or baseline is None:
        return "-"
    return f"({100 * (value - baseline):+.2f})"


def ablation_rows(results: Sequence[CellResult]) -> List[Dict[str, Any]]:
    """Per-label means with the difference to the baseline, baseline first."""
    labels: List[str] = list()
    for result in results:
        if result.label not in labels:
            labels.append(result.label)
    means = {
        label: (
            _mean([r.exprate for r in results if r.label == label]),
            _mean([r.long_exprate for r in results if r.label == label]),
            sum(r.label == label for r in results),
        )
        for label in labels
    }
    base_exprate, base_long, _ = means.get(BASELINE, (None, None, 0))
    rows = list()
    for label in labels:
        exprate, long_exprate, count = means[label]
        rows.append(
            {
                "mode": label,
                "exprate": _percent(exprate),
                "delta_vs_none": (
                    "-" if label == BASELINE else _delta(exprate, base_exprate)
                ),
                "long_exprate": _percent(long_exprate),
                "long_delta_vs_none": (
                    "-" if label == BASELINE else _delta(long_exprate, base_long)
                ),
                "seeds": count,
            }
        )
    return rows


def cmd_ablate(args: argparse.Namespace) -> None:
    """Train and evaluate every coverage mode for several seeds and tabulate the means."""
    if Pandas.get_pandas() is None:
        raise UsageError(MISSING_PANDAS_MESSAGE)
    if args.seeds < 1:
        raise UsageError(f"--seeds must be at least 1; Found {args.seeds}")
    config = _config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cells = ablation_cells(
        config,
        Path(args.data),
        Path(args.test) if args.test else None,
        out,
        args.seeds,
        args.with_unaugmented_baseline,
    )
    workers = _worker_count(len(cells), args.workers)
    logger.info("Running %d ablation cells on %d worker(s)", len(cells), workers)
    results = run_cells(cells, workers)

    cells_rows = [result._asdict() for result in results]
    Pandas.write_table(cells_rows, out / "cells.tsv", float_format="%.6f")
    table = Pandas.write_table(ablation_rows(results), out / "ablation.tsv")
    print(table.to_string(index=False))


# ===== Entry point ===============================================================


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="comer", description=__doc__.splitlines()[0].strip(' "'))
    parser.add_argument("--verbose", "-v", action="store_true", help="log at DEBUG level")
    commands = parser.add_subparsers(dest="command", parser_class=_Parser)
    commands.required = True

    def command(name: str, handler: Any, help_text: str) -> argparse.ArgumentParser:
        sub = commands.add_parser(name, help=help_text, description=help_text)
        sub.set_defaults(handler=handler)
        sub.add_argument(
            "--config", type=Path, default=None, help="TOML configuration file"
        )
        sub.add_argument(
            "--set",
            action="append",
            default=None,
            metavar="SECTION.KEY=VALUE",
            help="configuration override; repeatable",
        )
        return sub

    gen = command("gen", cmd_gen, "generate a synthetic formula corpus")
    gen.add_argument("--out", required=True, help="corpus directory")
    gen.add_argument("--seed", type=int, default=None)
    gen.add_argument("--n", type=int, default=None, help="number of samples")
    gen.add_argument("--force", action="store_true", help="overwrite a non-empty directory")

    train_ = command("train", cmd_train, "train one model")
    train_.add_argument(
        "--coverage", default=None, help=f"one of {', '.join(COVERAGE_MODES)}"
    )
    train_.add_argument("--data", required=True, help="corpus directory")
    train_.add_argument("--out", required=True, help="run directory")
    train_.add_argument("--seed", type=int, default=None)
    train_.add_argument("--resume", action="store_true", help="continue from last.cmrt")

    eval_ = command("eval", cmd_eval, "evaluate a checkpoint")
    eval_.add_argument("--checkpoint", required=True)
    eval_.add_argument("--data", required=True, help="corpus directory")
    eval_.add_argument("--beam", type=int, default=None)
    eval_.add_argument("--max-len", type=int, default=0)
    eval_.add_argument("--no-joint", action="store_true", help="left-to-right search only")
    eval_.add_argument("--report", default=None, help="write the report as JSON")
    eval_.add_argument("--predictions", default=None, help="write predictions as TSV")

    vis = command("visualize", cmd_visualize, "export refinement heatmaps")
    vis.add_argument("--checkpoint", required=True)
    vis.add_argument("--image", required=True, help="PGM image")
    vis.add_argument("--out", required=True)
    vis.add_argument("--max-len", type=int, default=0)

    ablate = command("ablate", cmd_ablate, "run the coverage ablation")
    ablate.add_argument("--data", required=True, help="training corpus directory")
    ablate.add_argument("--test", default=None, help="test corpus directory")
    ablate.add_argument("--out", required=True)
    ablate.add_argument("--seeds", type=int, default=3)
    ablate.add_argument("--workers", type=int, default=None)
    ablate.add_argument("--with-unaugmented-baseline", action="store_true")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.DEBUG if args.verbose else logging.INFO
    logging.basicConfig(level=level, format=LOG_FORMAT)
    try:
        args.handler(args)
    except ComerError as error:
        logger.debug("Command failed", exc_info=True)
        print(f"comer-error {error.code}: {' '.join(str(error).split())}", file=sys.stderr)
        return 1
    except OSError as error:
        logger.debug("Command failed", exc_info=True)
        print(f"comer-error io-error: {' '.join(str(error).split())}", file=sys.stderr)
        return 1
    return 0
