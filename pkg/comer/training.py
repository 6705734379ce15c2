""" Bidirectional training: one decoder learns both reading orders of every label.

Each step encodes a batch of (optionally rescaled) images once, decodes the
  left-to-right and right-to-left targets with teacher forcing, averages the two
  cross-entropy losses and takes one SGD step. Gradients never accumulate across
  steps.
"""
import logging
import time
import warnings
from pathlib import Path
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from .config import RunConfig
from .constants import ReservedTokens, RunFiles
from .data.augment import scale_augment
from .data.collate import Batch, batch_indices, collate, make_targets
from .data.dataset import Sample, split
from .data.vocab import Vocab
from .errors import CheckpointError, ComerWarning, NonFiniteError, TrainingDivergedError
from .metrics import predict
from .nn.model import ComerModel
from .search import default_max_len
from .serializers import append_json_line
from .tensor import ops
from .tensor.checkpoint import load_checkpoint, save_checkpoint
from .tensor.core import Tensor, precision
from .tensor.optim import SGD
from .tensor.random import RandomStream

logger = logging.getLogger(__name__)

__all__ = [
    "EpochRecord",
    "LossTerms",
    "Trainer",
    "bidirectional_loss",
    "build_model",
    "load_run",
    "make_targets",
    "sequence_loss",
    "train",
]


def sequence_loss(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Mean cross-entropy over the non-padding targets of ``[b, T, V]`` logits.

    Raises:
        DegenerateTargetError: If every target is padding.
    """
    return ops.cross_entropy(logits, targets, ignore_index=ReservedTokens.pad)


class LossTerms(NamedTuple):
    """Training loss of a batch.

    Args:
        total: Mean of the two direction losses.
        l2r: Left-to-right loss.
        r2l: Right-to-left loss.
    """

    total: Tensor
    l2r: Tensor
    r2l: Tensor


def bidirectional_loss(model: ComerModel, batch: Batch) -> LossTerms:
    """Equal-weight average of both directions' teacher-forced losses."""
    grid = model.encode(batch.images, batch.mask)
    losses = list()
    for direction in (batch.l2r, batch.r2l):
        output = model.decoder.decode_parallel(direction.inputs, grid, direction.token_mask)
        losses.append(sequence_loss(output.logits, direction.targets))
    return LossTerms((losses[0] + losses[1]) * 0.5, losses[0], losses[1])


def build_model(
    config: RunConfig, vocab_size: int, seed: Optional[int] = None
) -> ComerModel:
    """A freshly initialized model in the configured precision."""
    with precision(config.training.precision):
        return ComerModel(config, vocab_size, seed)


class EpochRecord(NamedTuple):
    """One line of the metrics log.

    Args:
        epoch: 1-based epoch number.
        train_loss: Mean batch loss of the epoch.
        val_exprate: Exact-match rate on the validation split; None without one.
        seconds: Wall time of the epoch, validation included.
    """

    epoch: int
    train_loss: float
    val_exprate: Optional[float]
    seconds: float


class Trainer:
    """Runs the epoch loop and writes checkpoints and the metrics log.

    Args:
        config: The run configuration.
        model: The model to train, created in ``config.training.precision``.
        train_samples: Training split.
        validation: Validation split; may be empty.
        out_dir: Run directory; nothing is written if None.
        vocab: Vocabulary written next to the checkpoints.
    """

    def __init__(
        self,
        config: RunConfig,
        model: ComerModel,
        train_samples: Sequence[Sample],
        validation: Sequence[Sample] = (),
        out_dir: Optional[Path] = None,
        vocab: Optional[Vocab] = None,
    ):
        self.config = config
        self.model = model
        self.train_samples = list(train_samples)
        self.validation = list(validation)
        self.out_dir = None if out_dir is None else Path(out_dir)
        self.vocab = vocab or Vocab()
        training = config.training
        self.optimizer = SGD(
            model.parameters(), training.lr, training.momentum, training.weight_decay
        )
        self.stream = RandomStream(training.seed)
        self.epoch = 0
        self.best_score = -np.inf
        lengths = [sample.length for sample in self.train_samples]
        self.max_len = config.search.max_len or default_max_len(lengths)

    # ===== Files =================================================================

    def _path(self, name: str) -> Path:
        assert self.out_dir is not None
        return self.out_dir / name

    def _prepare_run_dir(self, resume: bool) -> None:
        if self.out_dir is None:
            return
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.config.write(self._path(RunFiles.config))
        self.vocab.write(self._path(RunFiles.vocab))
        metrics = self._path(RunFiles.metrics)
        if not resume and metrics.exists():
            metrics.unlink()

    def state(self) -> Dict[str, np.ndarray]:
        """Model, optimizer and bookkeeping tensors of a checkpoint."""
        state = dict(self.model.state_dict())
        state.update(self.optimizer.state_dict())
        state["meta.epoch"] = np.array([self.epoch])
        state["meta.best_score"] = np.array([self.best_score])
        state["meta.vocab_size"] = np.array([self.model.vocab_size])
        return state

    def save(self, name: str) -> None:
        if self.out_dir is not None:
            save_checkpoint(self.state(), self._path(name))

    def resume(self) -> None:
        """Restore the parameters, statistics, momentum and epoch from ``last.cmrt``.

        Raises:
            CheckpointError: If there is no run directory or no last checkpoint in it.
        """
        if self.out_dir is None:
            raise CheckpointError("Cannot resume without a run directory")
        state = load_checkpoint(self._path(RunFiles.last))
        self.model.load_state_dict(state)
        self.optimizer.load_state_dict(state)
        self.epoch = int(state["meta.epoch"][0])
        self.best_score = float(state["meta.best_score"][0])
        logger.info("Resumed %s after epoch %d", self.out_dir, self.epoch)

    # ===== Loop ==================================================================

    def _batches(self, epoch: int) -> List[Batch]:
        training = self.config.training
        samples = self.train_samples
        if training.augment:
            rng = self.stream.child("augment").child(str(epoch)).generator()
            samples = [
                sample._replace(
                    image=scale_augment(
                        sample.image, rng, training.scale_min, training.scale_max
                    )
                )
                for sample in samples
            ]
        order = self.stream.child("shuffle").child(str(epoch)).generator()
        min_size = self.model.encoder.total_stride
        return [
            collate([samples[i] for i in chunk], min_size)
            for chunk in batch_indices(len(samples), training.batch_size, order)
        ]

    def train_step(self, batch: Batch, epoch: int, index: int) -> float:
        """One SGD step on one batch.

        Raises:
            TrainingDivergedError: If the loss or a gradient is NaN or Inf.
        """
        self.optimizer.zero_grad()
        try:
            loss = bidirectional_loss(self.model, batch).total
            value = loss.item()
            if not np.isfinite(value):
                raise NonFiniteError(f"loss is {value}")
            loss.backward()
        except NonFiniteError as error:
            diagnostic = self._diagnostic(epoch, index, batch, error)
            raise TrainingDivergedError(diagnostic) from error
        for name, param in self.optimizer.params.items():
            if param.grad is not None and not np.isfinite(param.grad).all():
                error = NonFiniteError(f"gradient of {name} is not finite")
                raise TrainingDivergedError(self._diagnostic(epoch, index, batch, error))
        self.optimizer.step()
        return value

    def _diagnostic(self, epoch: int, index: int, batch: Batch, error: Exception) -> str:
        return (
            f"Training diverged in epoch {epoch} at batch {index} "
            f"(samples {', '.join(batch.names)}) with lr {self.optimizer.lr}: {error}"
        )

    def validate(self) -> Optional[float]:
        """Exact-match rate of left-to-right search on the validation split."""
        if not self.validation:
            return None
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", ComerWarning)
            predictions = predict(
                self.model,
                self.validation,
                beam_size=self.config.training.val_beam,
                max_len=self.max_len,
                joint=False,
            )
        if caught:
            logger.debug("%d validation searches ended without an end token", len(caught))
        return float(np.mean([prediction.distance == 0 for prediction in predictions]))

    def run_epoch(self, epoch: int) -> EpochRecord:
        start = time.perf_counter()
        self.model.train()
        self.model.set_epoch(epoch)
        losses = [
            self.train_step(batch, epoch, index)
            for index, batch in enumerate(self._batches(epoch))
        ]
        val_exprate = self.validate()
        record = EpochRecord(
            epoch, float(np.mean(losses)), val_exprate, time.perf_counter() - start
        )
        logger.info(
            "Epoch %d: train loss %.4f, val exprate %s, %.1fs",
            record.epoch,
            record.train_loss,
            "-" if val_exprate is None else f"{val_exprate:.4f}",
            record.seconds,
        )
        return record

    def fit(self, resume: bool = False) -> List[EpochRecord]:
        """Train up to ``training.epochs`` epochs.

        The best checkpoint is chosen by validation exact match (by training loss
          without a validation split); the last checkpoint is written every epoch.

        Args:
            resume: Continue the run in ``out_dir`` after its last completed epoch.
        """
        if resume:
            self.resume()
        self._prepare_run_dir(resume)
        epochs = self.config.training.epochs
        if self.epoch >= epochs:
            warnings.warn(
                f"The run already completed {self.epoch} of {epochs} epochs; nothing to do",
                ComerWarning,
            )
        records = list()
        with precision(self.config.training.precision):
            for epoch in range(self.epoch + 1, epochs + 1):
                record = self.run_epoch(epoch)
                records.append(record)
                self.epoch = epoch
                score = record.val_exprate
                if score is None:
                    score = -record.train_loss
                if score > self.best_score:
                    # Checkpoints hold f32; resuming must see the same best score.
                    self.best_score = float(np.float32(score))
                    self.save(RunFiles.best)
                self.save(RunFiles.last)
                if self.out_dir is not None:
                    append_json_line(record, self._path(RunFiles.metrics))
        return records


def train(
    config: RunConfig,
    samples: Sequence[Sample],
    model: Optional[ComerModel] = None,
    out_dir: Optional[Path] = None,
    vocab: Optional[Vocab] = None,
    resume: bool = False,
) -> Tuple[ComerModel, List[EpochRecord]]:
    """Split ``samples``, build a model if none is given and train it.

    Returns:
        The trained model and the records of the epochs run by this call.
    """
    vocab = vocab or Vocab()
    training = config.training
    train_samples, validation = split(samples, training.val_fraction, training.seed)
    model = model if model is not None else build_model(config, len(vocab))
    trainer = Trainer(config, model, train_samples, validation, out_dir, vocab)
    logger.info(
        "Training %s coverage on %d samples (%d held out)",
        config.model.coverage,
        len(train_samples),
        len(validation),
    )
    return model, trainer.fit(resume)


def load_run(checkpoint: Path) -> Tuple[ComerModel, RunConfig, Vocab]:
    """Rebuild a model from a checkpoint and the config and vocabulary beside it.

    Raises:
        CheckpointError: If the run files are missing or the checkpoint does not fit
          the configured model (the message names the offending tensor).
    """
    checkpoint = Path(checkpoint)
    config_file = checkpoint.parent / RunFiles.config
    vocab_file = checkpoint.parent / RunFiles.vocab
    for required in (checkpoint, config_file, vocab_file):
        if not required.exists():
            raise CheckpointError(f"Missing run file {required}")
    config = RunConfig.from_toml(config_file)
    vocab = Vocab.read(vocab_file)
    state = load_checkpoint(checkpoint)
    if "meta.vocab_size" in state and int(state["meta.vocab_size"][0]) != len(vocab):
        raise CheckpointError(
            f"Checkpoint was trained with {int(state['meta.vocab_size'][0])} tokens; "
            f"{vocab_file} holds {len(vocab)}"
        )
    model = build_model(config, len(vocab))
    model.load_state_dict(state)
    model.eval()
    return model, config, vocab
