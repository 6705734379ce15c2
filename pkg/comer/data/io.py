""" Corpus and image files: 8-bit binary PGM images and TSV labels. """
import logging
import shutil
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np

from ..constants import CorpusFiles
from ..errors import UsageError
from .dataset import Sample
from .vocab import Vocab

logger = logging.getLogger(__name__)

PGM_MAGIC = b"P5"
MAX_GRAY = 255


def write_pgm(image: np.ndarray, file: Path, comment: Optional[str] = None) -> None:
    """Write a ``[H, W]`` array of values in [0, 1] as a binary PGM (P5) file.

    Args:
        image: Values in [0, 1]; clipped and rounded to 8 bits.
        file: Destination path.
        comment: Optional single-line header comment.
    """
    if image.ndim != 2:
        raise UsageError(f"Expected a 2D image; Found shape: {image.shape}")
    height, width = image.shape
    pixels = np.rint(np.clip(image, 0.0, 1.0) * MAX_GRAY).astype(np.uint8)
    header = PGM_MAGIC + b"\n"
    if comment:
        header += b"# " + comment.replace("\n", " ").encode("ascii", "replace") + b"\n"
    header += f"{width} {height}\n{MAX_GRAY}\n".encode("ascii")
    file.write_bytes(header + pixels.tobytes())


def _header_fields(payload: bytes, count: int, file: Path) -> Tuple[List[int], int]:
    """Parse ``count`` whitespace separated integers after the magic, skipping comments."""
    fields: List[int] = list()
    offset = len(PGM_MAGIC)
    while len(fields) < count:
        while offset < len(payload) and payload[offset : offset + 1].isspace():
            offset += 1
        if payload[offset : offset + 1] == b"#":
            offset = payload.index(b"\n", offset) + 1
            continue
        start = offset
        while offset < len(payload) and payload[offset : offset + 1].isdigit():
            offset += 1
        if start == offset:
            raise UsageError(f"Malformed PGM header in {file}")
        fields.append(int(payload[start:offset]))
    # Exactly one whitespace byte separates the header from the raster.
    return fields, offset + 1


def read_pgm(file: Path) -> np.ndarray:
    """Read an 8-bit binary PGM file into a ``[H, W]`` array of values in [0, 1].

    Raises:
        UsageError: If the file cannot be read or is not an 8-bit P5 image.
    """
    try:
        payload = Path(file).read_bytes()
    except OSError as error:
        reason = error.strerror or error
        raise UsageError(f"Cannot read PGM file {file}: {reason}") from error
    if payload[: len(PGM_MAGIC)] != PGM_MAGIC:
        raise UsageError(f"Not a binary PGM file: {file}")
    (width, height, max_gray), offset = _header_fields(payload, 3, file)
    if max_gray != MAX_GRAY:
        raise UsageError(f"Only 8-bit PGM files are supported; Found maxval {max_gray}")
    raster = payload[offset : offset + width * height]
    if len(raster) != width * height:
        raise UsageError(f"PGM file is truncated: {file}")
    pixels = np.frombuffer(raster, dtype=np.uint8).reshape(height, width)
    return pixels.astype(np.float64) / MAX_GRAY


def write_corpus(
    samples: Sequence[Sample], vocab: Vocab, directory: Path, force: bool = False
) -> None:
    """Write ``images/<name>.pgm``, ``labels.tsv`` and ``vocab.txt`` into ``directory``.

    With ``force`` the images of an earlier corpus in ``directory`` are removed first.

    Raises:
        UsageError: If the directory exists and is not empty, unless ``force`` is set.
    """
    directory = Path(directory)
    if directory.exists() and any(directory.iterdir()) and not force:
        raise UsageError(
            f"Output directory {directory} is not empty; pass --force to overwrite it"
        )
    images = directory / CorpusFiles.images
    if force and images.is_dir():
        shutil.rmtree(images)
    images.mkdir(parents=True, exist_ok=True)
    rows = list()
    for sample in samples:
        write_pgm(sample.image, images / f"{sample.name}.pgm")
        rows.append(f"{sample.name}\t{vocab.detokenize(vocab.decode(sample.tokens))}")
    (directory / CorpusFiles.labels).write_text("\n".join(rows) + "\n", encoding="utf-8")
    vocab.write(directory / CorpusFiles.vocab)
    logger.info("Wrote %d samples to %s", len(samples), directory)


def read_corpus(directory: Path) -> Tuple[List[Sample], Vocab]:
    """Read a corpus written by ``write_corpus``.

    A corpus without ``vocab.txt`` is read with the default vocabulary.

    Raises:
        UsageError: If the labels file is missing or malformed.
        VocabularyError: If a label holds a token outside the vocabulary.
    """
    directory = Path(directory)
    labels = directory / CorpusFiles.labels
    if not labels.exists():
        raise UsageError(f"No {CorpusFiles.labels} in corpus directory {directory}")
    vocab_file = directory / CorpusFiles.vocab
    vocab = Vocab.read(vocab_file) if vocab_file.exists() else Vocab()
    samples = list()
    for number, line in enumerate(labels.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        name, separator, text = line.partition("\t")
        if not separator:
            raise UsageError(f"Line {number} of {labels} has no tab separator")
        image = read_pgm(directory / CorpusFiles.images / f"{name}.pgm")
        samples.append(Sample(name, image, vocab.encode(vocab.tokenize(text))))
    return samples, vocab
