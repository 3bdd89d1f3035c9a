"""Truncated-BPTT training with ADADELTA plus Nesterov momentum.

Multiple sequences are trained in parallel: the corpus is dealt round-robin
onto ``batch_size`` independent streams, each stream runs consecutive
fixed-length windows over one sequence at a time with cell states carried
across windows, and a stream that exhausts a sequence starts the next one
behind a state reset.  Gradients never cross window boundaries.

Also here: the full-network finite-difference gradient check and the binary
checkpoint format (magic + version + JSON header + named float64 blocks,
little endian).
"""

from __future__ import annotations

import json
import math
import struct
import time
from dataclasses import dataclass, field
from typing import Iterator, Optional

import numpy as np

from .corpus import TokenSequence, Vocabulary, byte_vocab
from .errors import (CheckpointError, ConfigError, DimensionError,
                     DivergenceError, NumericError)
from .hierarchy import Network, NetworkSpec, build_network

LN2 = math.log(2.0)

_MAGIC = b"HRNNCKPT"
_FORMAT_VERSION = 1


@dataclass
class TrainConfig:
    bptt_length: int = 128
    batch_size: int = 64
    adadelta_rho: float = 0.95
    adadelta_eps: float = 1e-6
    momentum: float = 0.9
    max_epochs: int = 10
    seed: int = 0
    clip_norm: Optional[float] = 5.0

    def __post_init__(self):
        if self.bptt_length < 1:
            raise ConfigError("bptt_length must be at least 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be at least 1")
        if not 0.0 < self.adadelta_rho < 1.0:
            raise ConfigError("adadelta_rho must be in (0, 1)")
        if self.adadelta_eps <= 0.0:
            raise ConfigError("adadelta_eps must be positive")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError("momentum must be in [0, 1)")
        if self.max_epochs < 1:
            raise ConfigError("max_epochs must be at least 1")
        if self.clip_norm is not None and self.clip_norm <= 0.0:
            raise ConfigError("clip_norm must be positive or None")


@dataclass
class OptimizerState:
    """Per-block ADADELTA accumulators and Nesterov velocity."""

    sq_grad: dict[str, np.ndarray]
    sq_delta: dict[str, np.ndarray]
    velocity: dict[str, np.ndarray]

    @classmethod
    def for_params(cls, params: dict[str, np.ndarray]) -> "OptimizerState":
        return cls(sq_grad={k: np.zeros_like(v) for k, v in params.items()},
                   sq_delta={k: np.zeros_like(v) for k, v in params.items()},
                   velocity={k: np.zeros_like(v) for k, v in params.items()})


def adadelta_nesterov_update(params: dict[str, np.ndarray],
                             grads: dict[str, np.ndarray],
                             opt: OptimizerState,
                             config: TrainConfig) -> None:
    """In-place parameter update.

    Per block: the squared-gradient average decays with rho, the step is
    the gradient rescaled by RMS(previous deltas)/RMS(gradients), the
    squared-delta average absorbs it, and a Nesterov velocity is applied on
    top:  v <- mu v + delta;  x <- x + mu v + delta.  Blocks are independent,
    so iteration order cannot matter.
    """
    rho, eps, mu = config.adadelta_rho, config.adadelta_eps, config.momentum
    for name, p in params.items():
        g = grads[name]
        if p.shape != g.shape:
            raise DimensionError(f"gradient shape mismatch for {name}")
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient in block {name!r}")
        eg = opt.sq_grad[name]
        ed = opt.sq_delta[name]
        v = opt.velocity[name]
        eg *= rho
        eg += (1.0 - rho) * g * g
        delta = -np.sqrt(ed + eps) / np.sqrt(eg + eps) * g
        ed *= rho
        ed += (1.0 - rho) * delta * delta
        v *= mu
        v += delta
        p += mu * v + delta


@dataclass
class Batch:
    """One training window over all streams.

    ``active`` marks the positions that carry a real (input, target) pair;
    ``reset`` marks streams that start a fresh sequence with this window.
    """

    inputs: np.ndarray   # (batch, window) int64
    targets: np.ndarray  # (batch, window) int64
    active: np.ndarray   # (batch, window) bool
    reset: np.ndarray    # (batch,) bool

    @property
    def n_targets(self) -> int:
        return int(self.active.sum())


def batch_sequences(sequences: list[TokenSequence], batch_size: int,
                    bptt_length: int) -> Iterator[Batch]:
    """Deal sequences round-robin onto streams and emit training windows.

    Windows never span two sequences; a stream with nothing left idles
    (inactive positions) until every stream is exhausted.
    """
    if not sequences:
        raise ConfigError("empty corpus")
    streams = [[np.asarray(s.ids if isinstance(s, TokenSequence) else s,
                           dtype=np.int64)
                for s in sequences[b::batch_size]
                if len(s) >= 2]
               for b in range(batch_size)]
    seq_idx = [0] * batch_size
    pos = [0] * batch_size

    def remaining(b: int) -> int:
        if seq_idx[b] >= len(streams[b]):
            return 0
        return len(streams[b][seq_idx[b]]) - 1 - pos[b]

    while True:
        window = min(bptt_length, max((remaining(b) for b in range(batch_size)),
                                      default=0))
        if window == 0:
            return
        inputs = np.zeros((batch_size, window), dtype=np.int64)
        targets = np.zeros((batch_size, window), dtype=np.int64)
        active = np.zeros((batch_size, window), dtype=bool)
        reset = np.zeros(batch_size, dtype=bool)
        for b in range(batch_size):
            n = min(window, remaining(b))
            if n == 0:
                continue
            seq = streams[b][seq_idx[b]]
            if pos[b] == 0:
                reset[b] = True
            inputs[b, :n] = seq[pos[b]:pos[b] + n]
            targets[b, :n] = seq[pos[b] + 1:pos[b] + 1 + n]
            active[b, :n] = True
            pos[b] += n
            if pos[b] >= len(seq) - 1:
                seq_idx[b] += 1
                pos[b] = 0
        yield Batch(inputs=inputs, targets=targets, active=active, reset=reset)


def cross_entropy(probs: np.ndarray, targets: np.ndarray,
                  active: np.ndarray) -> tuple[float, int, np.ndarray]:
    """Summed negative log likelihood (nats) over active positions.

    Returns (loss, n_predictions, d_logits) with d_logits unnormalized:
    softmax minus one-hot target, zeroed on inactive positions.
    """
    B, T, V = probs.shape
    bi, ti = np.nonzero(active)
    picked = probs[bi, ti, targets[bi, ti]]
    with np.errstate(divide="ignore"):  # p == 0 -> inf loss, caught upstream
        loss = float(-np.log(picked).sum())
    d_logits = probs.copy()
    d_logits[bi, ti, targets[bi, ti]] -= 1.0
    d_logits[~active] = 0.0
    return loss, len(bi), d_logits


def clip_gradients(grads: dict[str, np.ndarray], clip_norm: float) -> float:
    """Scale all gradients so their global L2 norm is at most clip_norm."""
    total = math.sqrt(sum(float(np.sum(g * g))
                          for _, g in sorted(grads.items())))
    if total > clip_norm and total > 0.0:
        scale = clip_norm / total
        for g in grads.values():
            g *= scale
    return total


@dataclass
class EpochMetrics:
    epoch: int
    train_bpc: float
    heldout_bpc: Optional[float]
    seconds: float


@dataclass
class TrainResult:
    network: Network
    metrics: list[EpochMetrics]
    best_heldout_bpc: Optional[float]
    diverged: bool = False


def _corpus_bpc(net: Network, sequences: list[TokenSequence]) -> float:
    """Held-out BPC: fresh zero state per sequence, states carried within."""
    total_bits = 0.0
    total_preds = 0
    for seq in sequences:
        ids = seq.ids
        if len(ids) < 2:
            continue
        probs, _, _ = net.forward(ids[:-1])
        picked = probs[np.arange(len(ids) - 1), ids[1:]]
        total_bits += float(-np.log2(picked).sum())
        total_preds += len(ids) - 1
    if total_preds == 0:
        raise ConfigError("no predictions in evaluation corpus")
    return total_bits / total_preds


def train(spec: NetworkSpec, sequences: list[TokenSequence],
          config: TrainConfig, heldout: Optional[list[TokenSequence]] = None,
          vocab: Optional[Vocabulary] = None,
          checkpoint_path=None, metrics_path=None,
          record_timing: bool = True,
          network: Optional[Network] = None,
          log=None) -> TrainResult:
    """Train a network; deterministic for a fixed config and seed.

    Emits one metrics row per epoch (appended to ``metrics_path`` as CSV if
    given) and keeps the checkpoint of the best held-out BPC (or the latest
    epoch when there is no held-out set) at ``checkpoint_path``.  A
    non-finite loss aborts training; the last saved checkpoint is retained.
    Passing ``network`` continues training existing parameters instead of
    initializing fresh ones from the seed.
    """
    net = network if network is not None \
        else build_network(spec, rng_seed=config.seed)
    params = net.named_blocks()
    opt = OptimizerState.for_params(params)
    metrics: list[EpochMetrics] = []
    best: Optional[float] = None
    diverged = False

    if metrics_path is not None:
        with open(metrics_path, "w") as f:
            f.write("epoch,train_bpc,heldout_bpc,seconds\n")

    for epoch in range(1, config.max_epochs + 1):
        t0 = time.perf_counter()
        state = net.init_state(config.batch_size)
        epoch_nats = 0.0
        epoch_preds = 0
        for batch in batch_sequences(sequences, config.batch_size,
                                     config.bptt_length):
            if batch.reset.any():
                state = state.reset_where(batch.reset)
            probs, state, tape = net.forward(
                batch.inputs, state=state, active=batch.active,
                collect_tape=True)
            loss, n, d_logits = cross_entropy(probs, batch.targets,
                                              batch.active)
            if not math.isfinite(loss):
                diverged = True
                break
            grads = net.backward(tape, d_logits / max(n, 1))
            if config.clip_norm is not None:
                clip_gradients(grads, config.clip_norm)
            adadelta_nesterov_update(params, grads, opt, config)
            epoch_nats += loss
            epoch_preds += n
        if diverged:
            break
        train_bpc = epoch_nats / LN2 / max(epoch_preds, 1)
        heldout_bpc = _corpus_bpc(net, heldout) if heldout else None
        seconds = time.perf_counter() - t0 if record_timing else 0.0
        row = EpochMetrics(epoch, train_bpc, heldout_bpc, seconds)
        metrics.append(row)
        if log is not None:
            held = "" if heldout_bpc is None else f"  heldout {heldout_bpc:.4f}"
            log(f"epoch {epoch:4d}  train bpc {train_bpc:.4f}{held}")
        if metrics_path is not None:
            with open(metrics_path, "a") as f:
                held = "" if heldout_bpc is None else f"{heldout_bpc:.12g}"
                f.write(f"{epoch},{train_bpc:.12g},{held},{seconds:.3f}\n")
        improved = (heldout_bpc is None or best is None or heldout_bpc < best)
        if heldout_bpc is not None and improved:
            best = heldout_bpc
        if checkpoint_path is not None and improved:
            save_checkpoint(checkpoint_path, net, vocab)
    if diverged:
        raise DivergenceError(
            "training loss became non-finite; last good checkpoint retained")
    return TrainResult(network=net, metrics=metrics, best_heldout_bpc=best)


# ---------------------------------------------------------------------------
# Gradient checking
# ---------------------------------------------------------------------------

@dataclass
class GradCheckReport:
    max_rel_error: float
    worst_block: str
    n_params: int
    tolerance: float
    per_block: dict[str, float] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tolerance


def gradient_check(net: Network, ids, h: float = 1e-5,
                   tolerance: float = 1e-4) -> GradCheckReport:
    """Compare analytic gradients against central finite differences.

    The loss is the summed cross entropy of next-token prediction over the
    sequence, starting from a zero state.  Relative error per parameter is
    |analytic - numeric| / max(|analytic|, |numeric|, 1e-5); the floor
    absorbs finite-difference roundoff (~1e-10) on near-zero gradients.
    """
    ids = np.asarray(ids, dtype=np.int64)
    if ids.ndim != 1 or len(ids) < 2:
        raise ConfigError("gradient check needs one sequence of >= 2 tokens")
    inputs, targets = ids[:-1], ids[1:]
    t_idx = np.arange(len(targets))

    def loss_probs_tape(collect):
        probs, _, tape = net.forward(inputs, collect_tape=collect)
        loss = float(-np.log(probs[t_idx, targets]).sum())
        return loss, probs, tape

    _, probs, tape = loss_probs_tape(True)
    d_logits = probs.copy()
    d_logits[t_idx, targets] -= 1.0
    grads = net.backward(tape, d_logits)

    report = GradCheckReport(0.0, "", 0, tolerance)
    for name, arr in net.named_blocks().items():
        flat = arr.reshape(-1)
        g = grads[name].reshape(-1)
        block_max = 0.0
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            lp, _, _ = loss_probs_tape(False)
            flat[i] = orig - h
            lm, _, _ = loss_probs_tape(False)
            flat[i] = orig
            numeric = (lp - lm) / (2.0 * h)
            rel = abs(numeric - g[i]) / max(abs(numeric), abs(g[i]), 1e-5)
            block_max = max(block_max, rel)
        report.per_block[name] = block_max
        report.n_params += flat.size
        if block_max > report.max_rel_error:
            report.max_rel_error = block_max
            report.worst_block = name
    return report


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

def save_checkpoint(path, net: Network, vocab: Optional[Vocabulary] = None
                    ) -> None:
    """Self-describing binary container: magic, version, JSON header with the
    architecture and vocabulary, then named little-endian float64 blocks."""
    header = {"spec": net.spec.to_dict()}
    if vocab is not None:
        header["vocab"] = {"mode": vocab.mode,
                           "symbols": None if vocab.mode == "byte"
                           else list(vocab.symbols)}
    blob = json.dumps(header).encode("utf-8")
    blocks = net.named_blocks()
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<I", _FORMAT_VERSION))
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        f.write(struct.pack("<I", len(blocks)))
        for name, arr in blocks.items():
            nb = name.encode("utf-8")
            f.write(struct.pack("<I", len(nb)))
            f.write(nb)
            f.write(struct.pack("<I", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            f.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def _read_exact(f, n: int) -> bytes:
    data = f.read(n)
    if len(data) != n:
        raise CheckpointError("checkpoint file truncated")
    return data


def load_checkpoint(path) -> tuple[Network, Optional[Vocabulary]]:
    with open(path, "rb") as f:
        if _read_exact(f, len(_MAGIC)) != _MAGIC:
            raise CheckpointError(f"bad checkpoint magic in {path}")
        (version,) = struct.unpack("<I", _read_exact(f, 4))
        if version != _FORMAT_VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        (hlen,) = struct.unpack("<I", _read_exact(f, 4))
        try:
            header = json.loads(_read_exact(f, hlen).decode("utf-8"))
            spec = NetworkSpec.from_dict(header["spec"])
        except (ValueError, KeyError, TypeError) as e:
            raise CheckpointError(f"bad checkpoint header: {e}") from None
        vocab = None
        if "vocab" in header:
            v = header["vocab"]
            if v["mode"] == "byte":
                vocab = byte_vocab()
            else:
                from .corpus import (SENTENCE_BOUNDARY, WORD_BOUNDARY,
                                     Vocabulary as Vocab)
                symbols = tuple(v["symbols"])
                vocab = Vocab(symbols=symbols,
                              word_boundary_id=symbols.index(WORD_BOUNDARY),
                              sentence_boundary_id=symbols.index(
                                  SENTENCE_BOUNDARY),
                              mode="char")
        net = build_network(spec, rng_seed=0)
        blocks = net.named_blocks()
        (n_blocks,) = struct.unpack("<I", _read_exact(f, 4))
        if n_blocks != len(blocks):
            raise CheckpointError(
                f"checkpoint has {n_blocks} blocks, network needs "
                f"{len(blocks)}")
        for _ in range(n_blocks):
            (nlen,) = struct.unpack("<I", _read_exact(f, 4))
            name = _read_exact(f, nlen).decode("utf-8")
            if name not in blocks:
                raise CheckpointError(f"unexpected block {name!r}")
            (ndim,) = struct.unpack("<I", _read_exact(f, 4))
            shape = struct.unpack(f"<{ndim}Q", _read_exact(f, 8 * ndim))
            arr = blocks[name]
            if tuple(shape) != arr.shape:
                raise CheckpointError(
                    f"block {name!r} has shape {shape}, expected {arr.shape}")
            data = np.frombuffer(_read_exact(f, arr.size * 8), dtype="<f8")
            arr[...] = data.reshape(shape)
    return net, vocab
