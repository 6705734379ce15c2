""" Constants used throughout the comer package. """
from types import SimpleNamespace

# Stand-in for minus infinity in pre-softmax scores; exp() of it underflows to exactly 0.
MASK_SENTINEL = -1e9
# Scores at or below this value are treated as masked.
MASK_THRESHOLD = MASK_SENTINEL / 2

CHECKPOINT_MAGIC = b"CMRT"
CHECKPOINT_VERSION = 1

CONFIG_FILE_NAME = "comer.toml"
THREADS_ENV_VAR = "COMER_THREADS"


class ReservedTokens(SimpleNamespace):
    """Reserved token ids shared by the vocabulary, the decoder and the search."""

    pad = 0
    sos_l2r = 1
    eos = 2
    sos_r2l = 3


class RunFiles(SimpleNamespace):
    """Names of the files written into a training run directory."""

    best = "best.cmrt"
    last = "last.cmrt"
    config = "config.toml"
    metrics = "metrics.jsonl"
    vocab = "vocab.txt"


class CorpusFiles(SimpleNamespace):
    """Names of the files of a corpus directory."""

    images = "images"
    labels = "labels.tsv"
    vocab = "vocab.txt"
