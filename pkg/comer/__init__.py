""" Package level imports and versioning. """
import importlib.metadata as metadata

from . import errors
from .config import RunConfig, load_config
from .nn.model import ComerModel
from .search import Direction, Hypothesis, approximate_joint_search, beam_search, recognize
from .training import load_run, train

__version__ = ""
try:
    __version__ = metadata.version(__name__)
except metadata.PackageNotFoundError:
    pass
