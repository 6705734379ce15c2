""" Random formula token sequences from a small bracketed grammar.

    expression := operand (operator operand)*
    operand    := atom+ | atom ("^" | "_") "{" expression "}" | "(" expression ")"

Every sequence is generated with an exact, pre-drawn length so the corpus covers
  the whole configured length range, long formulas included. Braces and parentheses
  nest at most ``max_depth`` levels.
"""
import logging
from typing import List

import numpy as np

from ..config import GrammarConfig
from .vocab import (
    CLOSE_BRACE,
    DIGITS,
    LETTERS,
    OPEN_BRACE,
    OPERATORS,
    SUBSCRIPT,
    SUPERSCRIPT,
)

logger = logging.getLogger(__name__)

ATOMS = DIGITS + LETTERS
# Tokens added around the inner expression by a script or a parenthesized group.
SCRIPT_OVERHEAD = 4
PAREN_OVERHEAD = 2


class FormulaGrammar:
    """Samples token sequences according to a ``[dataset]`` configuration."""

    def __init__(self, config: GrammarConfig):
        self.config = config

    def sample_length(self, rng: np.random.Generator) -> int:
        """A uniform length on a fraction of draws, otherwise a short Poisson length."""
        low, high = self.config.min_length, self.config.max_length
        if rng.random() < self.config.uniform_fraction:
            return int(rng.integers(low, high + 1))
        return int(np.clip(1 + rng.poisson(self.config.short_mean - 1), low, high))

    def sample(self, rng: np.random.Generator) -> List[str]:
        return self.expression(self.sample_length(rng), 0, rng)

    def expression(self, length: int, depth: int, rng: np.random.Generator) -> List[str]:
        """Exactly ``length`` tokens forming an expression."""
        if length >= 3 and rng.random() < self.config.operator_prob:
            left = int(rng.integers(1, length - 1))
            operator = OPERATORS[rng.integers(len(OPERATORS))]
            return (
                self.operand(left, depth, rng)
                + [operator]
                + self.expression(length - left - 1, depth, rng)
            )
        return self.operand(length, depth, rng)

    def operand(self, length: int, depth: int, rng: np.random.Generator) -> List[str]:
        """Exactly ``length`` tokens forming an operand."""
        nested = depth < self.config.max_depth
        if nested and length > SCRIPT_OVERHEAD and rng.random() < self.config.script_prob:
            marker = SUPERSCRIPT if rng.random() < 0.5 else SUBSCRIPT
            inner = self.expression(length - SCRIPT_OVERHEAD, depth + 1, rng)
            return [self.atom(rng), marker, OPEN_BRACE] + inner + [CLOSE_BRACE]
        if nested and length > PAREN_OVERHEAD and rng.random() < self.config.paren_prob:
            return ["("] + self.expression(length - PAREN_OVERHEAD, depth + 1, rng) + [")"]
        return [self.atom(rng) for _ in range(length)]

    @staticmethod
    def atom(rng: np.random.Generator) -> str:
        return ATOMS[rng.integers(len(ATOMS))]


def is_balanced(tokens: List[str]) -> bool:
    """Whether braces and parentheses are properly nested."""
    pairs = {CLOSE_BRACE: OPEN_BRACE, ")": "("}
    stack: List[str] = list()
    for token in tokens:
        if token in (OPEN_BRACE, "("):
            stack.append(token)
        elif token in pairs:
            if not stack or stack.pop() != pairs[token]:
                return False
    return not stack


def nesting_depth(tokens: List[str]) -> int:
    depth = deepest = 0
    for token in tokens:
        if token in (OPEN_BRACE, "("):
            depth += 1
            deepest = max(deepest, depth)
        elif token in (CLOSE_BRACE, ")"):
            depth -= 1
    return deepest
