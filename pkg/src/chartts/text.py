"""Character inventory, text cleaning and integer encoding."""

from __future__ import annotations

import re
import string
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

PAD = "<pad>"
UNK = "<unk>"
PUNCTUATION = ".,!?'-;:"
_WS = re.compile(r"\s+")


class EmptyTextError(ValueError):
    """Raised when nothing is left of the input after cleaning."""


class Charset:
    """Ordered symbol inventory; id 0 is always padding."""

    def __init__(self, symbols: Sequence[str]):
        symbols = list(symbols)
        if not symbols or symbols[0] != PAD:
            raise ValueError("first symbol must be the pad symbol")
        if len(set(symbols)) != len(symbols):
            raise ValueError("duplicate symbols in charset")
        self.symbols = symbols
        self._ids = {s: i for i, s in enumerate(symbols)}
        self.unk_id = self._ids.get(UNK, 1)
        self._chars = frozenset(s for s in symbols if len(s) == 1)

    @classmethod
    def default(cls) -> "Charset":
        return cls([PAD, UNK, *string.ascii_lowercase, *string.digits, " ", *PUNCTUATION])

    def __len__(self) -> int:
        return len(self.symbols)

    def __eq__(self, other) -> bool:
        return isinstance(other, Charset) and self.symbols == other.symbols

    def __contains__(self, ch: str) -> bool:
        return ch in self._chars

    def id(self, symbol: str) -> int:
        return self._ids.get(symbol, self.unk_id)

    def dump(self, path) -> None:
        Path(path).write_text("\n".join(self.symbols) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Charset":
        text = Path(path).read_text(encoding="utf-8")
        # a trailing newline terminates the last symbol; the space symbol is a bare " " line
        lines = text.split("\n")
        if lines and lines[-1] == "":
            lines.pop()
        return cls(lines)


@dataclass
class EncodedText:
    ids: list
    original: str

    def __len__(self) -> int:
        return len(self.ids)


def normalize_text(s: str, charset: Charset | None = None) -> str:
    """Lowercase, drop symbols outside the charset, collapse whitespace."""
    charset = charset or _DEFAULT
    kept = "".join(ch if ch.isspace() or ch in charset else "" for ch in s.lower())
    out = _WS.sub(" ", kept).strip()
    if not out:
        raise EmptyTextError(f"no usable characters in {s!r}")
    return out


def encode(s: str, charset: Charset | None = None) -> EncodedText:
    charset = charset or _DEFAULT
    if not s:
        raise EmptyTextError("cannot encode empty text")
    return EncodedText(ids=[charset.id(ch) for ch in s], original=s)


def decode(ids: Iterable[int], charset: Charset | None = None) -> str:
    charset = charset or _DEFAULT
    out = []
    for i in ids:
        sym = charset.symbols[int(i)]
        if sym == PAD:
            continue
        out.append("�" if sym == UNK else sym)
    return "".join(out)


_DEFAULT = Charset.default()
