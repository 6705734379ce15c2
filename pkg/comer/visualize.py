""" Export of the refinement term as per-step heatmaps.

For a greedy left-to-right decode of one image, every step ``t`` gets a directory
  ``step{t}`` holding, for each decoder layer ``j`` with an ARM:

    step{t}_layer{j}_head{k}.pgm   the refinement term of head k on the feature grid
    step{t}_layer{j}_mean.pgm      its mean over heads
    step{t}_layer{j}.csv           raw values per cell, plus the accumulated attention

Heatmaps are min-max normalized per image since the scale of the refinement term is
  arbitrary after batch normalization; a constant map is written as all zeros.
"""
import logging
from pathlib import Path
from typing import Dict, List, NamedTuple, Optional

import numpy as np

from .constants import ReservedTokens
from .data.io import write_pgm
from .data.vocab import Vocab
from .errors import UsageError
from .nn.model import ComerModel
from .search import Direction, ModelScorer, greedy_search
from .serializers import write_json_file
from .tensor.core import no_grad, precision

logger = logging.getLogger(__name__)

ATTENDED_THRESHOLD = 0.5
NORMALIZATION_NOTE = "per-image min-max normalization of the refinement term"


class RefinementTrace(NamedTuple):
    """Refinement terms of a greedy decode.

    Args:
        tokens: Generated token ids, the end token included if emitted.
        h_o: Height of the feature grid.
        w_o: Width of the feature grid.
        refinement: 1-based layer index mapped to ``[h, T, L]`` refinement terms.
        accumulated: Layer index mapped to ``[T, L]`` head-averaged attention of the
          steps before each step.
    """

    tokens: List[int]
    h_o: int
    w_o: int
    refinement: Dict[int, np.ndarray]
    accumulated: Dict[int, np.ndarray]


class StepComparison(NamedTuple):
    """Mean refinement on already attended cells against the remaining cells."""

    step: int
    layer: int
    attended_cells: int
    mean_attended: Optional[float]
    mean_unattended: Optional[float]


def normalize(values: np.ndarray) -> np.ndarray:
    """Min-max scaling to [0, 1]; constant input maps to zeros."""
    low, high = float(values.min()), float(values.max())
    if high - low <= 0:
        return np.zeros_like(values, dtype=np.float64)
    return (values - low) / (high - low)


def trace_refinement(
    model: ComerModel, image: np.ndarray, max_len: int = 32
) -> RefinementTrace:
    """Greedy decode ``image`` and recompute the refinement terms of every step.

    Raises:
        UsageError: If the model has no ARM (coverage mode none).
    """
    if not any(layer.uses_arm for layer in model.decoder.layers):
        raise UsageError(
            "The model uses coverage mode 'none': no layer has an attention refinement "
            "module, so there is no refinement term to visualize"
        )
    scorer = ModelScorer(model, image)
    hypothesis = greedy_search(scorer, Direction.L2R, max_len)
    tokens = list(hypothesis.tokens)
    inputs = np.array([[ReservedTokens.sos_l2r, *tokens[:-1]]], dtype=np.int64)
    with precision(model.precision), no_grad():
        output = model.decoder.decode_parallel(inputs, scorer.memory)
    refinement, accumulated = dict(), dict()
    for index, layer in enumerate(output.coverage.layers, start=1):
        if layer.refinement is None:
            continue
        refinement[index] = layer.refinement.numpy()[0].astype(np.float64)
        attention = layer.refined.numpy()[0].astype(np.float64).mean(axis=0)
        accumulated[index] = np.cumsum(attention, axis=0) - attention
    memory = scorer.memory
    return RefinementTrace(tokens, memory.h_o, memory.w_o, refinement, accumulated)


def compare_step(trace: RefinementTrace, layer: int, step: int) -> StepComparison:
    """Mean head-averaged refinement on cells with accumulated attention above 0.5."""
    mean_map = trace.refinement[layer][:, step - 1].mean(axis=0)
    attended = trace.accumulated[layer][step - 1] > ATTENDED_THRESHOLD
    rest = ~attended
    return StepComparison(
        step,
        layer,
        int(attended.sum()),
        float(mean_map[attended].mean()) if attended.any() else None,
        float(mean_map[rest].mean()) if rest.any() else None,
    )


def _write_csv(
    file: Path, refinement: np.ndarray, accumulated: np.ndarray, w_o: int
) -> None:
    heads, cells = refinement.shape
    cell = np.arange(cells)
    columns = [cell // w_o, cell % w_o, *refinement, refinement.mean(axis=0), accumulated]
    head_columns = [f"head{k}" for k in range(1, heads + 1)]
    header = ",".join(["row", "column", *head_columns, "mean", "accumulated"])
    np.savetxt(
        file,
        np.stack(columns, axis=1),
        delimiter=",",
        header=header,
        comments="",
        fmt=["%d", "%d"] + ["%.8g"] * (heads + 2),
    )


def export_heatmaps(
    trace: RefinementTrace, out_dir: Path, vocab: Optional[Vocab] = None
) -> Dict:
    """Write the heatmaps, CSVs and ``summary.json`` of a trace into ``out_dir``.

    Returns:
        The summary written to ``summary.json``.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    shape = (trace.h_o, trace.w_o)
    comparisons = list()
    for step in range(1, len(trace.tokens) + 1):
        step_dir = out_dir / f"step{step}"
        step_dir.mkdir(exist_ok=True)
        for layer, refinement in trace.refinement.items():
            prefix = f"step{step}_layer{layer}"
            values = refinement[:, step - 1]
            for head, head_values in enumerate(values, start=1):
                write_pgm(
                    normalize(head_values.reshape(shape)),
                    step_dir / f"{prefix}_head{head}.pgm",
                    comment=NORMALIZATION_NOTE,
                )
            write_pgm(
                normalize(values.mean(axis=0).reshape(shape)),
                step_dir / f"{prefix}_mean.pgm",
                comment=NORMALIZATION_NOTE,
            )
            accumulated = trace.accumulated[layer][step - 1]
            _write_csv(step_dir / f"{prefix}.csv", values, accumulated, trace.w_o)
            comparisons.append(compare_step(trace, layer, step))

    compared = [
        c
        for c in comparisons
        if c.mean_attended is not None and c.mean_unattended is not None
    ]
    higher = sum(c.mean_attended > c.mean_unattended for c in compared)  # type: ignore
    summary = {
        "tokens": vocab.decode(trace.tokens) if vocab is not None else trace.tokens,
        "steps": len(trace.tokens),
        "layers": sorted(trace.refinement),
        "grid": list(shape),
        "attended_threshold": ATTENDED_THRESHOLD,
        "comparisons": comparisons,
        "steps_compared": len(compared),
        "attended_higher": higher,
        "majority": bool(compared) and 2 * higher > len(compared),
    }
    write_json_file(summary, out_dir / "summary.json")
    logger.info("Wrote heatmaps of %d steps to %s", len(trace.tokens), out_dir)
    return summary


def visualize(
    model: ComerModel,
    image: np.ndarray,
    out_dir: Path,
    vocab: Optional[Vocab] = None,
    max_len: int = 32,
) -> Dict:
    """Decode ``image`` greedily and export the refinement heatmaps of every step."""
    trace = trace_refinement(model, image, max_len)
    return export_heatmaps(trace, out_dir, vocab)
