"""Text ingestion: vocabularies, tokenization, and train/held-out splits.

Text is line-delimited, one sentence per line.  Tokenization collapses each
whitespace run to a single word-boundary token and terminates every line
with a sentence-boundary token.  Two vocabulary modes exist:

* ``char``: distinct non-whitespace characters of the corpus plus the two
  boundary tokens.
* ``byte``: the 256 possible UTF-8 byte values plus a reserved
  sentence-boundary id 256; the word boundary is byte 0x20.

Everything here is a pure function over immutable inputs.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError, EmptyCorpusError, OovError

WORD_BOUNDARY = "<w>"
SENTENCE_BOUNDARY = "<s>"

BYTE_VOCAB_SIZE = 257
_BYTE_SENTENCE_ID = 256
_BYTE_WORD_ID = 0x20

_WORD_RE = re.compile(r"\S+")


@dataclass
class Vocabulary:
    """Bijective symbol <-> id map including the boundary tokens."""

    symbols: tuple[str, ...]
    word_boundary_id: int
    sentence_boundary_id: int
    mode: str  # "char" | "byte"
    _index: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self):
        self._index = {s: i for i, s in enumerate(self.symbols)}
        if len(self._index) != len(self.symbols):
            raise ConfigError("vocabulary symbols are not distinct")
        if self.mode not in ("char", "byte"):
            raise ConfigError(f"unknown vocabulary mode {self.mode!r}")
        for name, i in (("word", self.word_boundary_id),
                        ("sentence", self.sentence_boundary_id)):
            if not 0 <= i < self.size:
                raise ConfigError(f"{name} boundary id {i} out of range")
        if self.word_boundary_id == self.sentence_boundary_id:
            raise ConfigError("boundary ids must be distinct")

    @property
    def size(self) -> int:
        return len(self.symbols)

    def id_of(self, symbol: str) -> int:
        try:
            return self._index[symbol]
        except KeyError:
            raise OovError(f"symbol {symbol!r} not in vocabulary") from None

    def symbol_of(self, token_id: int) -> str:
        return self.symbols[token_id]

    def __contains__(self, symbol: str) -> bool:
        return symbol in self._index

    @property
    def boundary_ids(self) -> tuple[int, int]:
        return (self.word_boundary_id, self.sentence_boundary_id)


@dataclass
class TokenSequence:
    """Token ids for one line (or a whole text) plus its character/word counts.

    ``n_chars`` counts every token, boundary tokens included.  ``n_words``
    counts maximal runs of non-boundary tokens plus every sentence-boundary
    token; word boundaries separate words but are not words themselves.
    """

    ids: np.ndarray
    n_chars: int
    n_words: int

    @classmethod
    def from_ids(cls, ids, vocab: Vocabulary) -> "TokenSequence":
        ids = np.asarray(ids, dtype=np.int64)
        if ids.size and (ids.min() < 0 or ids.max() >= vocab.size):
            raise DataError("token id outside vocabulary range")
        wb, sb = vocab.boundary_ids
        n_words = int(np.sum(ids == sb))
        in_run = False
        for i in ids:
            if i == wb or i == sb:
                in_run = False
            elif not in_run:
                n_words += 1
                in_run = True
        return cls(ids=ids, n_chars=int(ids.size), n_words=n_words)

    def __len__(self) -> int:
        return self.n_chars


def byte_vocab() -> Vocabulary:
    """The fixed 257-entry vocabulary: ids 0..255 are byte values, 256 is <s>."""
    symbols = tuple(chr(i) for i in range(256)) + (SENTENCE_BOUNDARY,)
    return Vocabulary(symbols=symbols, word_boundary_id=_BYTE_WORD_ID,
                      sentence_boundary_id=_BYTE_SENTENCE_ID, mode="byte")


def build_vocab(text: str, mode: str = "char") -> Vocabulary:
    """Build a vocabulary from corpus text.

    Char mode collects the distinct non-whitespace characters (sorted) and
    appends <w> and <s>.  Byte mode ignores the text content entirely apart
    from requiring it to be non-empty.
    """
    if mode == "byte":
        if len(text) == 0:
            raise EmptyCorpusError("empty corpus")
        return byte_vocab()
    if mode != "char":
        raise ConfigError(f"unknown vocabulary mode {mode!r}")
    chars = sorted({c for c in text if not c.isspace()})
    if not chars:
        raise EmptyCorpusError("corpus contains no non-whitespace characters")
    symbols = tuple(chars) + (WORD_BOUNDARY, SENTENCE_BOUNDARY)
    return Vocabulary(symbols=symbols, word_boundary_id=len(chars),
                      sentence_boundary_id=len(chars) + 1, mode="char")


def _line_ids(line: str, vocab: Vocabulary, line_no: int) -> list[int]:
    wb, sb = vocab.boundary_ids
    ids: list[int] = []
    if vocab.mode == "byte":
        normalized = " ".join(line.split())
        ids.extend(normalized.encode("utf-8"))
    else:
        first = True
        for m in _WORD_RE.finditer(line):
            if not first:
                ids.append(wb)
            first = False
            for off, ch in enumerate(m.group(), start=m.start()):
                if ch not in vocab:
                    raise OovError(
                        f"character {ch!r} at line {line_no}, offset {off} "
                        "is not in the vocabulary")
                ids.append(vocab.id_of(ch))
    ids.append(sb)
    return ids


def _split_text_lines(text: str) -> list[str]:
    lines = text.split("\n")
    if text.endswith("\n"):
        lines.pop()  # trailing newline, not an empty final line
    return lines


def tokenize(text: str, vocab: Vocabulary) -> TokenSequence:
    """Tokenize text (possibly multi-line) into a single id sequence.

    Whitespace runs inside a line become one <w>; every line ends with one
    <s>.  Leading and trailing whitespace on a line is dropped.
    """
    ids: list[int] = []
    for n, line in enumerate(_split_text_lines(text), start=1):
        ids.extend(_line_ids(line, vocab, n))
    return TokenSequence.from_ids(ids, vocab)


def tokenize_lines(text: str, vocab: Vocabulary) -> list[TokenSequence]:
    """Tokenize a corpus into one TokenSequence per line."""
    return [TokenSequence.from_ids(_line_ids(line, vocab, n), vocab)
            for n, line in enumerate(_split_text_lines(text), start=1)]


def tokenize_fragment(text: str, vocab: Vocabulary) -> list[int]:
    """Tokenize a prompt fragment: no <s> terminator, no line semantics."""
    ids = _line_ids(text, vocab, 1)
    return ids[:-1]


def detokenize(ids, vocab: Vocabulary) -> str:
    """Inverse of tokenize up to whitespace normalization: <w> -> space,
    <s> -> newline."""
    wb, sb = vocab.boundary_ids
    if vocab.mode == "byte":
        out = bytearray()
        for i in ids:
            out.extend(b"\n" if i == sb else bytes([int(i)]))
        return out.decode("utf-8", errors="replace")
    parts = []
    for i in ids:
        if i == wb:
            parts.append(" ")
        elif i == sb:
            parts.append("\n")
        else:
            parts.append(vocab.symbol_of(int(i)))
    return "".join(parts)


def split_heldout(sequences: list[TokenSequence],
                  fraction: float) -> tuple[list[TokenSequence], list[TokenSequence]]:
    """Split sequences into (train, heldout) by a deterministic stride.

    The heldout set receives ceil(fraction * n) sequences spread evenly over
    the corpus; the two sides are disjoint and cover the input.
    """
    if not 0.0 < fraction < 1.0:
        raise ConfigError(f"heldout fraction must be in (0, 1), got {fraction}")
    n = len(sequences)
    if n < 2:
        raise ConfigError("need at least 2 sequences to split")
    k = math.ceil(fraction * n)
    picks = {i * n // k for i in range(k)}
    heldout = [sequences[i] for i in sorted(picks)]
    train = [s for i, s in enumerate(sequences) if i not in picks]
    return train, heldout


def _escape_symbol(sym: str) -> str:
    if sym in (WORD_BOUNDARY, SENTENCE_BOUNDARY):
        return sym
    out = []
    for ch in sym:
        if ch == "\\":
            out.append("\\\\")
        elif ch.isspace() or not ch.isprintable():
            code = ord(ch)
            out.append(f"\\x{code:02x}" if code <= 0xFF else f"\\u{code:04x}")
        else:
            out.append(ch)
    return "".join(out)


def _unescape_symbol(line: str) -> str:
    if line in (WORD_BOUNDARY, SENTENCE_BOUNDARY):
        return line
    out = []
    i = 0
    while i < len(line):
        ch = line[i]
        if ch != "\\":
            out.append(ch)
            i += 1
            continue
        if i + 1 >= len(line):
            raise DataError(f"dangling escape in vocabulary line {line!r}")
        kind = line[i + 1]
        if kind == "\\":
            out.append("\\")
            i += 2
        elif kind == "x":
            out.append(chr(int(line[i + 2:i + 4], 16)))
            i += 4
        elif kind == "u":
            out.append(chr(int(line[i + 2:i + 6], 16)))
            i += 6
        else:
            raise DataError(f"unknown escape in vocabulary line {line!r}")
    return "".join(out)


def save_vocab(vocab: Vocabulary, path) -> None:
    """Persist a vocabulary as one (escaped) symbol per line, in id order."""
    with open(path, "w", encoding="utf-8") as f:
        for sym in vocab.symbols:
            f.write(_escape_symbol(sym) + "\n")


def load_vocab(path) -> Vocabulary:
    """Load a vocabulary file; the mode is inferred from the symbol layout."""
    with open(path, encoding="utf-8") as f:
        text = f.read()
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    symbols = tuple(_unescape_symbol(line) for line in lines)
    if not symbols:
        raise DataError(f"vocabulary file {path} is empty")
    if WORD_BOUNDARY in symbols:
        if SENTENCE_BOUNDARY not in symbols:
            raise DataError("char vocabulary lacks a sentence boundary token")
        return Vocabulary(symbols=symbols,
                          word_boundary_id=symbols.index(WORD_BOUNDARY),
                          sentence_boundary_id=symbols.index(SENTENCE_BOUNDARY),
                          mode="char")
    expected = byte_vocab()
    if symbols != expected.symbols:
        raise DataError("vocabulary file is neither char mode nor the fixed "
                        "byte layout")
    return expected
