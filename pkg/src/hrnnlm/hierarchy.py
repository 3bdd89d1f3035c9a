"""Multi-timescale network assembly and execution.

A network is a stack of LSTM modules running at nested rates: module 1
steps on every character, module 2 only on word-boundary tokens (<w>, <s>),
and module 1 is reset exactly when module 2 steps.  The activation a module
sends upward is delayed by one step (so the embedding of the word just
finished survives the reset); the context a module sends back down is not
delayed.  Clock derivation is implemented for any number of levels; the
concrete builders cover the single-module stack ("mono") and the two-level
variants:

* ``hlstm_a``: both character layers read the one-hot input; layer 2 is a
  generative layer conditioned on the word context, layer 1 produces the
  word embedding that feeds the word module.
* ``hlstm_b``: character layer 1 encodes the input into a word embedding
  that feeds layer 2 (together with the context); layer 2's activation
  feeds the word module.

The softmax layer always reads the top character layer.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict
from typing import Optional, Sequence

import numpy as np

from .cells import (LstmParams, LstmState, LstmTape, init_lstm_params,
                    lstm_step, lstm_backward_step, softmax)
from .corpus import TokenSequence, Vocabulary
from .errors import ConfigError, DimensionError

VARIANTS = ("mono", "hlstm_a", "hlstm_b")

# Clock rank of a token: ordinary characters advance only level 1, word
# boundaries advance level 2, sentence boundaries advance levels 2 and 3.
_RANK_WORD = 2
_RANK_SENTENCE = 3


@dataclass
class NetworkSpec:
    """Architecture description: variant, sizes, and boundary-token binding."""

    variant: str
    vocab_size: int
    hidden_dim: int | Sequence[int]
    levels: Optional[int] = None
    layers_per_module: int = 2
    word_boundary_id: Optional[int] = None
    sentence_boundary_id: Optional[int] = None

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}; "
                              f"expected one of {VARIANTS}")
        if self.levels is None:
            self.levels = 1 if self.variant == "mono" else 2
        if isinstance(self.hidden_dim, (int, np.integer)):
            self.hidden_dim = (int(self.hidden_dim),) * self.total_layers
        else:
            self.hidden_dim = tuple(int(h) for h in self.hidden_dim)
        self.validate()

    def validate(self) -> None:
        if self.vocab_size < 2:
            raise ConfigError("vocab_size must be at least 2")
        if self.layers_per_module < 1:
            raise ConfigError("layers_per_module must be at least 1")
        if self.variant == "mono":
            if self.levels != 1:
                raise ConfigError("mono networks have exactly one level")
        else:
            if self.levels != 2:
                raise ConfigError(f"{self.variant} networks are built with "
                                  "exactly two levels")
            if self.layers_per_module != 2:
                raise ConfigError("hlstm variants use two layers per module")
            for name in ("word_boundary_id", "sentence_boundary_id"):
                v = getattr(self, name)
                if v is None or not 0 <= v < self.vocab_size:
                    raise ConfigError(f"hlstm variants need a valid {name}")
            if self.word_boundary_id == self.sentence_boundary_id:
                raise ConfigError("boundary ids must be distinct")
        if len(self.hidden_dim) != self.total_layers:
            raise ConfigError(
                f"need {self.total_layers} hidden sizes, got "
                f"{len(self.hidden_dim)}")
        if any(h < 1 for h in self.hidden_dim):
            raise ConfigError("hidden sizes must be positive")

    @property
    def total_layers(self) -> int:
        return self.levels * self.layers_per_module

    @classmethod
    def for_vocab(cls, variant: str, vocab: Vocabulary,
                  hidden_dim, layers_per_module: int = 2) -> "NetworkSpec":
        return cls(variant=variant, vocab_size=vocab.size,
                   hidden_dim=hidden_dim, layers_per_module=layers_per_module,
                   word_boundary_id=vocab.word_boundary_id,
                   sentence_boundary_id=vocab.sentence_boundary_id)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkSpec":
        return cls(**d)


@dataclass
class _LayerDef:
    name: str
    level: int
    hidden: int
    sources: list[tuple[str, Optional[str]]]  # (kind, referenced layer)


def _layer_defs(spec: NetworkSpec) -> list[_LayerDef]:
    dims = spec.hidden_dim
    if spec.variant == "mono":
        defs = []
        for k in range(spec.layers_per_module):
            src = [("onehot", None)] if k == 0 else [("hidden", f"layer{k}")]
            defs.append(_LayerDef(f"layer{k + 1}", 1, dims[k], src))
        return defs
    char2_src = ([("onehot", None), ("hidden", "word2")]
                 if spec.variant == "hlstm_a"
                 else [("hidden", "char1"), ("hidden", "word2")])
    return [
        _LayerDef("char1", 1, dims[0], [("onehot", None)]),
        _LayerDef("char2", 1, dims[1], char2_src),
        _LayerDef("word1", 2, dims[2], [("delay", None), ("indicator", None)]),
        _LayerDef("word2", 2, dims[3], [("hidden", "word1")]),
    ]


def _output_layer(spec: NetworkSpec) -> str:
    return (f"layer{spec.layers_per_module}" if spec.variant == "mono"
            else "char2")


def _feedup_layer(spec: NetworkSpec) -> Optional[str]:
    if spec.variant == "mono":
        return None
    return "char1" if spec.variant == "hlstm_a" else "char2"


@dataclass
class ClockPlan:
    """Per-level clock and reset rows for one token sequence.

    Row l (0-based) drives level l+1.  Level 1 ticks every step; level l>1
    ticks only on tokens that also tick level l-1; every level below the top
    is reset exactly when the level above ticks.
    """

    clocks: np.ndarray  # (levels, T) of {0, 1}
    resets: np.ndarray  # (levels, T)

    @property
    def levels(self) -> int:
        return self.clocks.shape[0]

    @property
    def steps(self) -> int:
        return self.clocks.shape[1]

    def validate(self) -> None:
        c, r = self.clocks, self.resets
        if c.shape != r.shape:
            raise DimensionError("clock/reset shapes differ")
        if not np.all(c[0] == 1):
            raise ConfigError("level-1 clock must tick every step")
        for l in range(1, self.levels):
            if np.any(c[l] > c[l - 1]):
                raise ConfigError(f"level-{l + 1} clock ticks while "
                                  f"level {l} is idle")
        for l in range(self.levels - 1):
            if not np.array_equal(r[l], c[l + 1]):
                raise ConfigError(f"level-{l + 1} reset must equal the "
                                  f"level-{l + 2} clock")
        if np.any(r[self.levels - 1] != 0):
            raise ConfigError("the top level is never reset")


def token_ranks(ids: np.ndarray, word_boundary_id: int,
                sentence_boundary_id: int) -> np.ndarray:
    ranks = np.ones_like(ids, dtype=np.int64)
    ranks[ids == word_boundary_id] = _RANK_WORD
    ranks[ids == sentence_boundary_id] = _RANK_SENTENCE
    return ranks


def derive_clocks(ids, vocab: Vocabulary, levels: int) -> ClockPlan:
    """Derive nested clock/reset rows for a token sequence.

    Level l ticks on tokens of clock rank >= l: every token for level 1,
    boundary tokens for level 2, sentence boundaries for level 3.
    """
    if levels < 1:
        raise ConfigError("levels must be at least 1")
    if isinstance(ids, TokenSequence):
        ids = ids.ids
    ids = np.asarray(ids, dtype=np.int64)
    ranks = token_ranks(ids, vocab.word_boundary_id, vocab.sentence_boundary_id)
    clocks = np.stack([(ranks >= l + 1).astype(np.uint8)
                       for l in range(levels)])
    resets = np.zeros_like(clocks)
    resets[:-1] = clocks[1:]
    plan = ClockPlan(clocks=clocks, resets=resets)
    plan.validate()
    return plan


@dataclass
class NetworkState:
    """Cloneable full-stack runtime state: one cell state per layer plus the
    one-step feed-up delay buffer."""

    layers: dict[str, LstmState]
    delay: Optional[np.ndarray] = None

    @property
    def batch(self) -> int:
        h = next(iter(self.layers.values())).h
        return h.shape[0]

    def clone(self) -> "NetworkState":
        return NetworkState(
            layers={k: v.copy() for k, v in self.layers.items()},
            delay=None if self.delay is None else self.delay.copy())

    def reset_where(self, mask) -> "NetworkState":
        """Zero every array on the batch rows where mask is true."""
        m = np.asarray(mask, dtype=bool)[:, None]
        layers = {k: LstmState(np.where(m, 0.0, v.m), np.where(m, 0.0, v.h))
                  for k, v in self.layers.items()}
        delay = None if self.delay is None else np.where(m, 0.0, self.delay)
        return NetworkState(layers=layers, delay=delay)


@dataclass
class StepTape:
    layer_tapes: dict[str, LstmTape]
    top_h: np.ndarray


class Network:
    """A built network: spec plus parameters, with forward/backward/step."""

    def __init__(self, spec: NetworkSpec,
                 rng: Optional[np.random.Generator] = None,
                 init_scale: float = 0.08):
        self.spec = spec
        self.layer_defs = _layer_defs(spec)
        self.output_layer = _output_layer(spec)
        self.feedup_layer = _feedup_layer(spec)
        # Per-step processing order: the word module consumes last step's
        # delayed embedding first, so the character module sees fresh context.
        self.step_order = sorted(
            self.layer_defs, key=lambda d: -d.level)
        rng = np.random.default_rng(0) if rng is None else rng
        self.layers: dict[str, LstmParams] = {}
        for d in self.layer_defs:
            self.layers[d.name] = init_lstm_params(
                self._input_dim(d), d.hidden, rng, init_scale)
        out_h = self._hidden_of(self.output_layer)
        self.softmax_W = rng.uniform(-init_scale, init_scale,
                                     size=(spec.vocab_size, out_h))
        self.softmax_b = rng.uniform(-init_scale, init_scale,
                                     size=spec.vocab_size)

    # -- structure ---------------------------------------------------------

    def _hidden_of(self, name: str) -> int:
        return next(d.hidden for d in self.layer_defs if d.name == name)

    def _source_width(self, kind: str, ref: Optional[str]) -> int:
        if kind == "onehot":
            return self.spec.vocab_size
        if kind == "hidden":
            return self._hidden_of(ref)
        if kind == "delay":
            return self._hidden_of(self.feedup_layer)
        if kind == "indicator":
            return 2
        raise ConfigError(f"unknown input source {kind!r}")

    def _input_dim(self, d: _LayerDef) -> int:
        return sum(self._source_width(k, r) for k, r in d.sources)

    def connections(self) -> list[tuple[str, str, int]]:
        """Wiring table as (source, target, delay) triples."""
        table = []
        for d in self.layer_defs:
            for kind, ref in d.sources:
                if kind == "hidden":
                    table.append((ref, d.name, 0))
                elif kind == "delay":
                    table.append((self.feedup_layer, d.name, 1))
                else:
                    table.append((kind, d.name, 0))
        table.append((self.output_layer, "softmax", 0))
        return table

    def named_blocks(self) -> dict[str, np.ndarray]:
        out = {}
        for d in self.layer_defs:
            for fname, arr in self.layers[d.name].blocks():
                out[f"{d.name}.{fname}"] = arr
        out["softmax.W"] = self.softmax_W
        out["softmax.b"] = self.softmax_b
        return out

    def zero_grads(self) -> dict[str, np.ndarray]:
        return {k: np.zeros_like(v) for k, v in self.named_blocks().items()}

    def param_count(self) -> int:
        return sum(a.size for a in self.named_blocks().values())

    # -- running -----------------------------------------------------------

    def init_state(self, batch: int = 1) -> NetworkState:
        layers = {d.name: LstmState.zeros(d.hidden, batch)
                  for d in self.layer_defs}
        delay = (np.zeros((batch, self._hidden_of(self.feedup_layer)))
                 if self.feedup_layer else None)
        return NetworkState(layers=layers, delay=delay)

    def _onehot(self, ids_t: np.ndarray) -> np.ndarray:
        x = np.zeros((ids_t.shape[0], self.spec.vocab_size))
        x[np.arange(ids_t.shape[0]), ids_t] = 1.0
        return x

    def _word_clock(self, ids_t: np.ndarray, active_t: np.ndarray) -> np.ndarray:
        boundary = ((ids_t == self.spec.word_boundary_id)
                    | (ids_t == self.spec.sentence_boundary_id))
        return boundary & active_t

    def _layer_gates(self, level: int, active_t, word_clock):
        """(clock, reset) for a layer of the given level at one step."""
        if level == 1:
            reset = (word_clock if self.spec.levels > 1
                     else np.zeros_like(active_t))
            return active_t, reset
        return word_clock, np.zeros_like(word_clock)

    def _run_step(self, states: dict, delay, ids_t, active_t,
                  collect_tape: bool):
        """Advance every layer one step; returns updated (states, delay,
        probs, tape)."""
        spec = self.spec
        onehot = self._onehot(ids_t)
        if spec.levels > 1:
            word_clock = self._word_clock(ids_t, active_t)
            indicator = np.stack(
                [(ids_t == spec.word_boundary_id) & active_t,
                 (ids_t == spec.sentence_boundary_id) & active_t],
                axis=1).astype(np.float64)
        else:
            word_clock = None
            indicator = None

        new_states = dict(states)
        tapes = {} if collect_tape else None
        for d in self.step_order:
            parts = []
            for kind, ref in d.sources:
                if kind == "onehot":
                    parts.append(onehot)
                elif kind == "hidden":
                    parts.append(new_states[ref].h)
                elif kind == "delay":
                    parts.append(delay)
                else:
                    parts.append(indicator)
            x = parts[0] if len(parts) == 1 else np.concatenate(parts, axis=-1)
            clock, reset = self._layer_gates(d.level, active_t, word_clock)
            new_states[d.name], tape = lstm_step(
                self.layers[d.name], x, states[d.name], clock, reset)
            if collect_tape:
                tapes[d.name] = tape

        top_h = new_states[self.output_layer].h
        probs = softmax(top_h @ self.softmax_W.T + self.softmax_b)
        new_delay = (new_states[self.feedup_layer].h if self.feedup_layer
                     else None)
        tape = StepTape(tapes, top_h) if collect_tape else None
        return new_states, new_delay, probs, tape

    def forward(self, ids, state: Optional[NetworkState] = None,
                clocks: Optional[ClockPlan] = None, active=None,
                collect_tape: bool = False):
        """Run a token batch through the network.

        ids is (T,) or (batch, T).  Returns (probs, final_state, tape) with
        probs shaped (T, V) or (batch, T, V) to match the input.  The input
        state is never mutated.  An explicit ClockPlan (single sequence
        only) is checked against the plan the ids imply.
        """
        ids = np.asarray(ids, dtype=np.int64)
        single = ids.ndim == 1
        if single:
            ids = ids[None, :]
        if ids.ndim != 2:
            raise DimensionError("ids must be a 1-D or 2-D integer array")
        B, T = ids.shape
        if ids.size and (ids.min() < 0 or ids.max() >= self.spec.vocab_size):
            raise ConfigError("token id out of vocabulary range")
        if active is None:
            active = np.ones((B, T), dtype=bool)
        else:
            active = np.asarray(active, dtype=bool)
            if active.shape != ids.shape:
                raise DimensionError("active mask shape must match ids")
        if clocks is not None:
            if not single:
                raise ConfigError("an explicit ClockPlan applies to a single "
                                  "sequence only")
            if clocks.steps != T:
                raise DimensionError(
                    f"clock plan covers {clocks.steps} steps, ids have {T}")
            clocks.validate()
            if self.spec.levels > 1:
                implied = self._word_clock(ids[0], active[0])
                if not np.array_equal(clocks.clocks[1].astype(bool), implied):
                    raise ConfigError("clock plan does not match the ids")

        state = self.init_state(B) if state is None else state
        states = dict(state.layers)
        delay = state.delay
        probs_out = np.empty((B, T, self.spec.vocab_size))
        tape = [] if collect_tape else None
        for t in range(T):
            states, delay, probs, st = self._run_step(
                states, delay, ids[:, t], active[:, t], collect_tape)
            probs_out[:, t] = probs
            if collect_tape:
                tape.append(st)
        final = NetworkState(layers=states, delay=delay)
        if single:
            return probs_out[0], final, tape
        return probs_out, final, tape

    def step(self, state: NetworkState, token_id: int):
        """Streaming single-token step: (next-char probs, new state).

        Functionally one step of forward(); the given state is left intact,
        so callers may branch a hypothesis by cloning.
        """
        token_id = int(token_id)
        if not 0 <= token_id < self.spec.vocab_size:
            raise ConfigError(f"token id {token_id} out of range")
        ids_t = np.array([token_id], dtype=np.int64)
        active_t = np.ones(1, dtype=bool)
        states, delay, probs, _ = self._run_step(
            dict(state.layers), state.delay, ids_t, active_t, False)
        return probs[0], NetworkState(layers=states, delay=delay)

    def backward(self, tape: list[StepTape], d_logits) -> dict[str, np.ndarray]:
        """Reverse-mode gradients of a taped forward run.

        d_logits is (batch, T, V) or (T, V): gradient of the loss w.r.t. the
        pre-softmax logits at every step.  State gradients are truncated at
        the window start.
        """
        d_logits = np.asarray(d_logits, dtype=np.float64)
        if d_logits.ndim == 2:
            d_logits = d_logits[None]
        T = len(tape)
        if d_logits.shape[1] != T:
            raise DimensionError(f"{T} taped steps but "
                                 f"{d_logits.shape[1]} gradient steps")
        grads = self.zero_grads()
        B = d_logits.shape[0]
        running = {d.name: LstmState.zeros(d.hidden, B)
                   for d in self.layer_defs}
        d_delay = (np.zeros((B, self._hidden_of(self.feedup_layer)))
                   if self.feedup_layer else None)
        widths = {d.name: [self._source_width(k, r) for k, r in d.sources]
                  for d in self.layer_defs}

        for t in range(T - 1, -1, -1):
            st = tape[t]
            dl = d_logits[:, t]
            grads["softmax.W"] += np.einsum("bi,bj->ij", dl, st.top_h)
            grads["softmax.b"] += dl.sum(axis=0)
            running[self.output_layer].h += dl @ self.softmax_W
            if self.feedup_layer:
                running[self.feedup_layer].h += d_delay

            for d in reversed(self.step_order):
                d_x, d_prev = lstm_backward_step(
                    self.layers[d.name], st.layer_tapes[d.name],
                    running[d.name], grads, prefix=f"{d.name}.")
                running[d.name] = d_prev
                if d_x is None:
                    if any(k == "delay" for k, _ in d.sources):
                        d_delay = np.zeros_like(d_delay)
                    continue
                offsets = np.cumsum(widths[d.name])[:-1]
                pieces = np.split(d_x, offsets, axis=-1)
                for (kind, ref), piece in zip(d.sources, pieces):
                    if kind == "hidden":
                        running[ref].h += piece
                    elif kind == "delay":
                        d_delay = piece
                    # onehot / indicator inputs are not trainable
        return grads


def build_network(spec: NetworkSpec, rng_seed: int = 0) -> Network:
    """Allocate and initialize all parameters for a spec (uniform, seeded)."""
    return Network(spec, rng=np.random.default_rng(rng_seed))
