""" Neural network components of the recognizer, built on comer.tensor. """
from .attention import AttentionRefinement, AttentionWeights, MultiHeadAttention
from .decoder import CoverageMode, CoverageState, DecodeCache, Decoder, DecoderOutput
from .encoder import Encoder, FeatureGrid
from .model import ComerModel
from .module import Module

__all__ = [
    "AttentionRefinement",
    "AttentionWeights",
    "ComerModel",
    "CoverageMode",
    "CoverageState",
    "DecodeCache",
    "Decoder",
    "DecoderOutput",
    "Encoder",
    "FeatureGrid",
    "Module",
    "MultiHeadAttention",
]
