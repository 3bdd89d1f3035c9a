"""Command-line entry point: train / eval / sample / decode / gradcheck.

Every subcommand reads a flat key=value config file (``--config``) whose
keys mirror the command-line flags one to one; flags override file values.
Unknown config keys are rejected.  All randomness flows from the single
``seed`` key.

Exit codes: 0 success, 1 usage/config error, 2 data/format error,
3 numeric failure.
"""

from __future__ import annotations

import argparse
import os
import sys

from .corpus import build_vocab, save_vocab, split_heldout, \
    tokenize_lines
from .decoding import DecodeConfig, DecodeResult, beam_search, read_posteriors
from .errors import ConfigError, DataError, HrnnlmError, NumericError
from .evaluation import evaluate, format_report_table, sample
from .hierarchy import NetworkSpec, build_network
from .training import TrainConfig, gradient_check, load_checkpoint, \
    train

# key -> (type, default, help); shared across config files and flags
_COMMON_KEYS = {
    "seed": (int, 0, "seed for all randomness"),
    "threads": (int, 1, "worker cap; batch math is vectorized, so this is "
                        "validated but effectively 1"),
    "output_dir": (str, ".", "directory for produced artifacts"),
}

_CORPUS_KEYS = {
    "corpus": (str, None, "path to a UTF-8 text file, one sentence per line"),
    "mode": (str, "char", "vocabulary mode: char or byte"),
    "uppercase": (bool, False, "uppercase the corpus before tokenizing"),
}

_SPEC_KEYS = {
    "variant": (str, "hlstm_b", "mono | hlstm_a | hlstm_b"),
    "hidden": (str, "16", "hidden units per layer (int or comma list)"),
    "layers_per_module": (int, 2, "LSTM layers per module"),
}

_TRAIN_KEYS = {
    "heldout_fraction": (float, 0.01, "fraction of lines held out"),
    "bptt": (int, 128, "truncation window length"),
    "batch": (int, 64, "parallel sequence streams"),
    "rho": (float, 0.95, "squared-average decay"),
    "eps": (float, 1e-6, "rms stabilizer"),
    "momentum": (float, 0.9, "Nesterov momentum"),
    "clip": (float, 5.0, "global gradient-norm clip; 0 disables"),
    "epochs": (int, 10, "training epochs"),
    "timing": (bool, False, "record wall time in the metrics CSV (makes "
                            "reruns non-identical)"),
}

_DECODE_KEYS = {
    "checkpoint": (str, None, "model checkpoint path"),
    "posterior": (str, None, "frame-posterior file (text or binary)"),
    "beam": (int, 512, "beam width"),
    "lm_weight": (float, 2.0, "language-model weight"),
    "insertion_bonus": (float, 1.6, "per-character insertion bonus"),
    "width_prune": (float, 1e-4, "drop labels below this frame posterior"),
    "depth_prune": (int, 0, "max transcript length; 0 = unlimited"),
    "nbest": (int, 0, "write an n-best CSV with this many rows"),
}

_KEYSETS = {
    "train": {**_COMMON_KEYS, **_CORPUS_KEYS, **_SPEC_KEYS, **_TRAIN_KEYS},
    "eval": {**_COMMON_KEYS, **_CORPUS_KEYS,
             "checkpoint": (str, None, "model checkpoint path"),
             "csv_out": (str, "", "also append a CSV row to this path")},
    "sample": {**_COMMON_KEYS,
               "checkpoint": (str, None, "model checkpoint path"),
               "length": (int, 200, "characters to draw"),
               "prime": (str, "", "prompt text"),
               "temperature": (float, 1.0, "sampling temperature")},
    "decode": {**_COMMON_KEYS, **_DECODE_KEYS},
    "gradcheck": {**_COMMON_KEYS, **_CORPUS_KEYS, **_SPEC_KEYS,
                  "tolerance": (float, 1e-4, "max relative error allowed")},
}

_BOOL_TRUE = {"1", "true", "yes", "on"}
_BOOL_FALSE = {"0", "false", "no", "off"}


def _parse_value(key: str, raw: str, typ):
    if typ is bool:
        low = str(raw).strip().lower()
        if low in _BOOL_TRUE:
            return True
        if low in _BOOL_FALSE:
            return False
        raise ConfigError(f"config key {key!r}: expected a boolean, "
                          f"got {raw!r}")
    try:
        return typ(raw)
    except (TypeError, ValueError):
        raise ConfigError(f"config key {key!r}: cannot parse {raw!r} "
                          f"as {typ.__name__}") from None


def load_config_file(path: str, keyset: dict) -> dict:
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    values = {}
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            if "=" not in stripped:
                raise ConfigError(
                    f"{path}:{lineno}: expected key=value, got {stripped!r}")
            key, _, raw = stripped.partition("=")
            key = key.strip()
            if key not in keyset:
                raise ConfigError(f"{path}:{lineno}: unknown config key "
                                  f"{key!r}")
            values[key] = _parse_value(key, raw.strip(), keyset[key][0])
    return values


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hrnnlm",
        description="hierarchical character-level language model toolkit")
    sub = parser.add_subparsers(dest="command", required=True)
    for cmd, keys in _KEYSETS.items():
        p = sub.add_parser(cmd)
        p.add_argument("--config", default=None,
                       help="flat key=value config file")
        for key, (typ, default, help_text) in keys.items():
            flag = "--" + key.replace("_", "-")
            if typ is bool:
                p.add_argument(flag, default=None, metavar="BOOL",
                               help=help_text)
            else:
                p.add_argument(flag, type=str, default=None, help=help_text)
    return parser


def _resolve(args, command: str) -> dict:
    keyset = _KEYSETS[command]
    values = {k: default for k, (_, default, _) in keyset.items()}
    if args.config:
        values.update(load_config_file(args.config, keyset))
    for key, (typ, _, _) in keyset.items():
        raw = getattr(args, key)
        if raw is not None:
            values[key] = _parse_value(key, raw, typ)
    if values["threads"] < 1:
        raise ConfigError("threads must be at least 1")
    return values


def _require_path(values: dict, key: str) -> str:
    path = values.get(key)
    if not path:
        raise ConfigError(f"missing required option {key!r}")
    if not os.path.exists(path):
        raise ConfigError(f"{key} path does not exist: {path}")
    return path


def _read_corpus(values: dict) -> str:
    path = _require_path(values, "corpus")
    with open(path, encoding="utf-8") as f:
        text = f.read()
    if values.get("uppercase"):
        text = text.upper()
    return text


def _spec_from(values: dict, vocab) -> NetworkSpec:
    hidden = [int(h) for h in str(values["hidden"]).split(",")]
    if len(hidden) == 1:
        hidden = hidden[0]
    return NetworkSpec.for_vocab(values["variant"], vocab, hidden,
                                 layers_per_module=values["layers_per_module"])


def _cmd_train(values: dict) -> int:
    text = _read_corpus(values)
    vocab = build_vocab(text, values["mode"])
    lines = tokenize_lines(text, vocab)
    if len(lines) >= 2 and 0.0 < values["heldout_fraction"] < 1.0:
        train_seqs, heldout = split_heldout(lines, values["heldout_fraction"])
    else:
        train_seqs, heldout = lines, None
    spec = _spec_from(values, vocab)
    config = TrainConfig(bptt_length=values["bptt"],
                         batch_size=values["batch"],
                         adadelta_rho=values["rho"],
                         adadelta_eps=values["eps"],
                         momentum=values["momentum"],
                         max_epochs=values["epochs"], seed=values["seed"],
                         clip_norm=values["clip"] or None)
    out = values["output_dir"]
    os.makedirs(out, exist_ok=True)
    save_vocab(vocab, os.path.join(out, "vocab.txt"))
    result = train(spec, train_seqs, config, heldout=heldout, vocab=vocab,
                   checkpoint_path=os.path.join(out, "checkpoint.bin"),
                   metrics_path=os.path.join(out, "metrics.csv"),
                   record_timing=values["timing"], log=print)
    last = result.metrics[-1]
    held = ("" if last.heldout_bpc is None
            else f", heldout bpc {last.heldout_bpc:.4f}")
    print(f"done: {len(result.metrics)} epochs, "
          f"train bpc {last.train_bpc:.4f}{held}")
    print(f"artifacts in {out}: checkpoint.bin, metrics.csv, vocab.txt")
    return 0


def _cmd_eval(values: dict) -> int:
    net, vocab = load_checkpoint(_require_path(values, "checkpoint"))
    if vocab is None:
        raise DataError("checkpoint carries no vocabulary")
    text = _read_corpus(values)
    seqs = tokenize_lines(text, vocab)
    dims = "x".join(str(h) for h in net.spec.hidden_dim)
    report = evaluate(net, seqs, n_params=net.param_count(),
                      size_label=f"{net.spec.variant} {dims}")
    print(format_report_table([report]))
    if values["csv_out"]:
        new = not os.path.exists(values["csv_out"])
        with open(values["csv_out"], "a") as f:
            if new:
                f.write(report.csv_header() + "\n")
            f.write(report.csv_row() + "\n")
    return 0


def _cmd_sample(values: dict) -> int:
    net, vocab = load_checkpoint(_require_path(values, "checkpoint"))
    if vocab is None:
        raise DataError("checkpoint carries no vocabulary")
    text = sample(net, vocab, length=values["length"],
                  prime=values["prime"], temperature=values["temperature"],
                  seed=values["seed"])
    print(text)
    return 0


def _cmd_decode(values: dict) -> int:
    net, vocab = load_checkpoint(_require_path(values, "checkpoint"))
    if vocab is None:
        raise DataError("checkpoint carries no vocabulary")
    post = read_posteriors(_require_path(values, "posterior"))
    config = DecodeConfig(beam_width=values["beam"],
                          lm_weight=values["lm_weight"],
                          insertion_bonus=values["insertion_bonus"],
                          width_prune=values["width_prune"],
                          depth_prune=values["depth_prune"] or None)
    results = beam_search(post, net, vocab, config)
    print(results[0].text)
    if values["nbest"]:
        out = values["output_dir"]
        os.makedirs(out, exist_ok=True)
        path = os.path.join(out, "nbest.csv")
        with open(path, "w") as f:
            f.write(DecodeResult.csv_header() + "\n")
            for r in results[:values["nbest"]]:
                f.write(r.csv_row() + "\n")
        print(f"n-best list written to {path}", file=sys.stderr)
    return 0


def _cmd_gradcheck(values: dict) -> int:
    text = _read_corpus(values)
    vocab = build_vocab(text, values["mode"])
    lines = tokenize_lines(text, vocab)
    seq = max(lines, key=lambda s: s.n_chars)
    spec = _spec_from(values, vocab)
    net = build_network(spec, rng_seed=values["seed"])
    if net.param_count() > 10_000:
        raise ConfigError(
            f"gradient check wants a tiny network (<= 10k parameters), "
            f"this spec has {net.param_count():,}")
    report = gradient_check(net, seq.ids, tolerance=values["tolerance"])
    print(f"checked {report.n_params} parameters on a {seq.n_chars}-token "
          f"sequence")
    print(f"max relative error {report.max_rel_error:.3e} "
          f"(worst block {report.worst_block}), tolerance "
          f"{report.tolerance:.1e}")
    if not report.passed:
        raise NumericError(
            f"gradient check failed: {report.max_rel_error:.3e} > "
            f"{report.tolerance:.1e}")
    print("gradient check passed")
    return 0


_HANDLERS = {
    "train": _cmd_train,
    "eval": _cmd_eval,
    "sample": _cmd_sample,
    "decode": _cmd_decode,
    "gradcheck": _cmd_gradcheck,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return 1 if e.code not in (0, None) else 0
    try:
        values = _resolve(args, args.command)
        return _HANDLERS[args.command](values)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except DataError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except NumericError as e:
        print(f"error: {e}", file=sys.stderr)
        return 3
    except HrnnlmError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


def console_main() -> None:
    sys.exit(main())


if __name__ == "__main__":
    console_main()
