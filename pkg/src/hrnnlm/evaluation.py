"""Bits-per-character / word-perplexity evaluation and text sampling.

BPC averages -log2 p(next token) over every prediction a sequence affords:
a sequence of N tokens yields N - 1 predictions from a fresh zero state,
with states (and clocks/resets) carried across the whole sequence.  Word
perplexity converts BPC through the character-per-word ratio:
ppl = 2 ** (bpc * n_chars / n_words), where boundary tokens count as both
characters and words per the corpus counting rule.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .corpus import TokenSequence, Vocabulary, detokenize, tokenize_fragment
from .errors import ConfigError
from .hierarchy import Network


@dataclass
class EvalReport:
    bpc: float
    n_chars: int
    n_words: int
    word_ppl: float
    n_params: Optional[int] = None
    size_label: str = ""

    def csv_row(self) -> str:
        return (f"{self.size_label},{self.n_params or ''},"
                f"{self.bpc:.6g},{self.word_ppl:.6g}")

    @staticmethod
    def csv_header() -> str:
        return "size,params,bpc,word_ppl"


def ppl_from_bpc(bpc: float, n_chars: int, n_words: int) -> float:
    """Word-level perplexity implied by a bits-per-character figure."""
    if n_words < 1:
        raise ConfigError("n_words must be at least 1")
    return 2.0 ** (bpc * n_chars / n_words)


def _as_seq_list(text) -> list[TokenSequence]:
    return [text] if isinstance(text, TokenSequence) else list(text)


def bpc(net: Network, text) -> float:
    """Bits per character of one TokenSequence or a list of them."""
    bits, preds = sequence_bits(net, text)
    if preds == 0:
        raise ConfigError("no predictions: every sequence has < 2 tokens")
    return bits / preds


def sequence_bits(net: Network, text) -> tuple[float, int]:
    """Total -log2 likelihood and prediction count over the sequences."""
    total_bits = 0.0
    total = 0
    for seq in _as_seq_list(text):
        ids = seq.ids if isinstance(seq, TokenSequence) else np.asarray(seq)
        if len(ids) < 2:
            continue
        probs, _, _ = net.forward(ids[:-1])
        picked = probs[np.arange(len(ids) - 1), ids[1:]]
        total_bits += float(-np.log2(picked).sum())
        total += len(ids) - 1
    return total_bits, total


def evaluate(net: Network, sequences, n_params: Optional[int] = None,
             size_label: str = "") -> EvalReport:
    seqs = _as_seq_list(sequences)
    n_chars = sum(s.n_chars for s in seqs)
    n_words = sum(s.n_words for s in seqs)
    b = bpc(net, seqs)
    return EvalReport(bpc=b, n_chars=n_chars, n_words=n_words,
                      word_ppl=ppl_from_bpc(b, n_chars, n_words),
                      n_params=n_params, size_label=size_label)


def format_report_table(reports: list[EvalReport]) -> str:
    """Aligned table with the usual columns: Size, # Params, BPC, Word PPL."""
    rows = [["Size", "# Params", "BPC", "Word PPL"]]
    for r in reports:
        rows.append([r.size_label or "-",
                     f"{r.n_params:,}" if r.n_params else "-",
                     f"{r.bpc:.4f}", f"{r.word_ppl:.1f}"])
    widths = [max(len(row[c]) for row in rows) for c in range(4)]
    lines = ["  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip()
             for row in rows]
    return "\n".join(lines)


def sample(net: Network, vocab: Vocabulary, length: int, prime: str = "",
           temperature: float = 1.0, seed: int = 0) -> str:
    """Autoregressive sampling, seeded and deterministic.

    A prime is fed from the zero state exactly the way training conditions
    a line, and generation continues from there.  Without a prime the zero
    state is bootstrapped with one word-boundary token to obtain a first
    distribution.  Tokens are drawn from softmax(log p / temperature);
    clocks fall out of the emitted tokens themselves, so word/sentence
    boundaries drive the word-level module exactly as during scoring.
    """
    if temperature <= 0.0:
        raise ConfigError("temperature must be positive")
    rng = np.random.default_rng(seed)
    state = net.init_state(1)
    echo_ids = tokenize_fragment(prime, vocab) if prime else []
    feed = echo_ids if echo_ids else [vocab.word_boundary_id]
    probs = None
    for tok in feed:
        probs, state = net.step(state, tok)
    out: list[int] = []
    for _ in range(length):
        if temperature != 1.0:
            with np.errstate(divide="ignore"):
                logits = np.log(probs) / temperature
            logits -= logits.max()
            p = np.exp(logits)
            p /= p.sum()
        else:
            p = probs / probs.sum()
        tok = int(rng.choice(len(p), p=p))
        out.append(tok)
        probs, state = net.step(state, tok)
    # echo the prime as tokenized, so its whitespace matches what was fed
    return detokenize(echo_ids + out, vocab)
