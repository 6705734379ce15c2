""" Token vocabulary: formula symbols plus the reserved control tokens. """
from pathlib import Path
from typing import Dict, Iterable, List, Sequence, Tuple

from ..errors import VocabularyError

RESERVED = ("<pad>", "<sos>", "<eos>", "<sos_r2l>")

DIGITS = ("1", "2", "3", "4", "5")
LETTERS = ("a", "b", "n", "x", "y")
OPERATORS = ("+", "-", "=", "\\times")
PARENTHESES = ("(", ")")
SUPERSCRIPT, SUBSCRIPT = "^", "_"
OPEN_BRACE, CLOSE_BRACE = "{", "}"
SCRIPT_MARKS = (SUPERSCRIPT, SUBSCRIPT, OPEN_BRACE, CLOSE_BRACE)
SYMBOLS = DIGITS + LETTERS + OPERATORS + PARENTHESES + SCRIPT_MARKS


class Vocab:
    """Bijective mapping between token strings and integer ids.

    Ids 0-3 are the reserved tokens (pad, left-to-right start, end, right-to-left
      start); formula symbols follow in the given order.
    """

    def __init__(self, symbols: Iterable[str] = SYMBOLS):
        symbols = tuple(symbols)
        tokens = RESERVED + symbols
        if len(set(tokens)) != len(tokens):
            raise VocabularyError(f"Vocabulary tokens must be unique; Found: {symbols}")
        for token in symbols:
            if not token or any(character.isspace() for character in token):
                raise VocabularyError(
                    f"Vocabulary tokens must be non-empty words; Found: {token!r}"
                )
        self.tokens: Tuple[str, ...] = tokens
        self._ids: Dict[str, int] = {token: index for index, token in enumerate(tokens)}

    @property
    def symbols(self) -> Tuple[str, ...]:
        return self.tokens[len(RESERVED) :]

    def __len__(self) -> int:
        return len(self.tokens)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Vocab) and self.tokens == other.tokens

    def __repr__(self) -> str:
        return f"Vocab({len(self.symbols)} symbols)"

    @staticmethod
    def is_reserved(token_id: int) -> bool:
        return 0 <= token_id < len(RESERVED)

    def encode(self, tokens: Sequence[str]) -> Tuple[int, ...]:
        """Ids of formula tokens.

        Raises:
            VocabularyError: For an unknown or reserved token.
        """
        ids = list()
        for token in tokens:
            token_id = self._ids.get(token)
            if token_id is None or self.is_reserved(token_id):
                raise VocabularyError(f"Unknown formula token {token!r}")
            ids.append(token_id)
        return tuple(ids)

    def decode(self, ids: Iterable[int]) -> List[str]:
        """Token strings of ids; reserved ids are dropped.

        Raises:
            VocabularyError: For an id outside the vocabulary.
        """
        tokens = list()
        for token_id in ids:
            token_id = int(token_id)
            if not 0 <= token_id < len(self.tokens):
                raise VocabularyError(f"Token id {token_id} is outside the vocabulary")
            if not self.is_reserved(token_id):
                tokens.append(self.tokens[token_id])
        return tokens

    @staticmethod
    def tokenize(text: str) -> List[str]:
        """Split a space-joined label into tokens."""
        return text.split()

    @staticmethod
    def detokenize(tokens: Sequence[str]) -> str:
        return " ".join(tokens)

    def write(self, file: Path) -> None:
        """One token per line in id order, reserved tokens included."""
        file.write_text("\n".join(self.tokens) + "\n", encoding="utf-8")

    @classmethod
    def read(cls, file: Path) -> "Vocab":
        """Read a vocabulary written by ``write``.

        Raises:
            VocabularyError: If the file does not start with the reserved tokens.
        """
        tokens = [line for line in file.read_text(encoding="utf-8").splitlines() if line]
        if tuple(tokens[: len(RESERVED)]) != RESERVED:
            raise VocabularyError(
                f"Vocabulary file {file} must start with the reserved tokens {RESERVED}"
            )
        return cls(tokens[len(RESERVED) :])

