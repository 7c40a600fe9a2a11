"""Command-line entry point: ``synth``, ``train``, ``eval``, ``predict`` and ``bench``.

Exit codes: 0 success, 1 usage or configuration error, 2 data error, 3
numerical failure. Failures print one line on standard error, prefixed with
the failing stage.
"""

from __future__ import annotations

import os

# pin BLAS to one thread before numpy loads, for timing stability and bitwise reproducibility
for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, "1")

import argparse  # noqa: E402
import csv  # noqa: E402
import json  # noqa: E402
import logging  # noqa: E402
import statistics  # noqa: E402
import sys  # noqa: E402
import time  # noqa: E402
import tracemalloc  # noqa: E402
import typing  # noqa: E402
from dataclasses import dataclass, fields  # noqa: E402
from pathlib import Path  # noqa: E402

import numpy as np  # noqa: E402

from . import numcore as nc  # noqa: E402
from .attention import BandMask, MhaParams, windowed_self_attention  # noqa: E402
from .dataio import DEFAULT_PERIODS, load_csv, synth_generate, write_csv  # noqa: E402
from .errors import ConformerError, DataError, UsageError  # noqa: E402
from .model import (  # noqa: E402
    DEFAULT_FRACTIONS,
    HEADS,
    ModelConfig,
    evaluate,
    load_checkpoint,
    persistence_metrics,
    predict,
    prepare,
    save_checkpoint,
    train,
    write_history,
)

log = logging.getLogger("conformer")

SEED_ENV = "CONFORMER_SEED"
COMMANDS = ("synth", "train", "eval", "predict", "bench")
# keys bound from data rather than configured
_DERIVED = ("d_x", "scales")
# run-level keys accepted in a config file alongside the model keys
_RUN_KEYS = {"data": str, "target": str, "split": list, "out_dir": str}


# -- configuration ----------------------------------------------------------------

@dataclass(frozen=True)
class RunConfig:
    model: ModelConfig
    data: str | None = None
    target: str | None = None
    split: tuple[float, float, float] = DEFAULT_FRACTIONS
    out_dir: str = "run"


def _flag(name: str) -> str:
    return "--lambda" if name == "lam" else "--" + name.replace("_", "-")


def _parse_split(value) -> tuple[float, float, float]:
    if isinstance(value, str):
        try:
            value = [float(v) for v in value.split(",")]
        except ValueError:
            raise UsageError(f"split must be three comma-separated numbers, got {value!r}") from None
    if (not isinstance(value, (list, tuple)) or len(value) != 3
            or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in value)):
        raise UsageError(f"split must be three numbers, got {value!r}")
    return tuple(float(v) for v in value)


def parse_config(path=None, overrides: dict | None = None, env=None) -> RunConfig:
    """Merge a JSON config file, the seed environment override and flag overrides.

    Precedence, lowest first: defaults, file, ``CONFORMER_SEED``, flags. Unknown
    keys, wrong types and constraint violations raise :class:`UsageError`.
    """
    raw: dict = {}
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise UsageError(f"config file not found: {p}")
        text = p.read_text().strip()
        if text:
            try:
                raw = json.loads(text)
            except json.JSONDecodeError as exc:
                raise UsageError(f"config file {p} is not valid JSON: {exc.msg} (line {exc.lineno})") from None
            if not isinstance(raw, dict):
                raise UsageError("config file must hold a JSON object")
    env = os.environ if env is None else env
    if env.get(SEED_ENV):
        try:
            raw["seed"] = int(env[SEED_ENV])
        except ValueError:
            raise UsageError(f"{SEED_ENV} must be an integer, got {env[SEED_ENV]!r}") from None
    raw.update({k: v for k, v in (overrides or {}).items() if v is not None})

    run = {}
    for key, kind in _RUN_KEYS.items():
        if key in raw:
            value = raw.pop(key)
            if key == "split":
                run[key] = _parse_split(value)
            elif value is not None and not isinstance(value, kind):
                raise UsageError(f"config key {key!r} expects {kind.__name__}")
            else:
                run[key] = value
    return RunConfig(ModelConfig.from_dict(raw), **run)


# -- benchmark ----------------------------------------------------------------------

def _median_of_means(samples: list[float], groups: int = 5) -> float:
    groups = max(1, min(groups, len(samples)))
    chunks = np.array_split(np.asarray(samples), groups)
    return float(statistics.median(float(c.mean()) for c in chunks))


def bench_attention(lengths, trials: int = 20, w: int = 32, d: int = 32, n_heads: int = 1,
                    warmup: int = 10, seed: int = 0, path=None) -> list[dict]:
    """Time banded against dense windowed self-attention (forward, no tape).

    Each ``(L, variant)`` gets ``warmup`` untimed runs. The ``trials`` timed
    runs are interleaved round-robin across lengths within one variant, so
    background load spreads evenly over lengths and the dense runs' large
    allocations do not disturb the banded timings. Times are reported as a
    median of group means. Peak traced allocation comes from one extra run per case.
    """
    if trials < 1:
        raise UsageError("trials must be at least 1")
    rng = np.random.default_rng(seed)
    params = MhaParams(d, n_heads, rng)
    band = BandMask(w)
    cases = [(int(L), variant, nc.Tensor(rng.normal(size=(1, L, d))))
             for L in lengths for variant in ("banded", "dense")]
    times: dict[tuple[int, str], list[float]] = {(L, v): [] for L, v, _ in cases}
    peaks = {}
    with nc.no_grad():
        for impl in ("banded", "dense"):
            group = [c for c in cases if c[1] == impl]
            for L, variant, x in group:
                for _ in range(warmup):
                    windowed_self_attention(x, params, band, variant)
            for _ in range(trials):
                for L, variant, x in group:
                    t0 = time.perf_counter()
                    windowed_self_attention(x, params, band, variant)
                    times[L, variant].append((time.perf_counter() - t0) * 1e3)
        for L, variant, x in cases:
            tracemalloc.start()
            windowed_self_attention(x, params, band, variant)
            peaks[L, variant] = tracemalloc.get_traced_memory()[1]
            tracemalloc.stop()
    rows = []
    for L, variant, _ in cases:
        rows.append({"L": L, "variant": variant, "mean_ms": _median_of_means(times[L, variant]),
                     "peak_bytes": int(peaks[L, variant])})
        log.info("bench L=%d %s %.3f ms", L, variant, rows[-1]["mean_ms"])
    if path is not None:
        with open(path, "w", newline="") as fh:
            wr = csv.DictWriter(fh, fieldnames=["L", "variant", "mean_ms", "peak_bytes"])
            wr.writeheader()
            wr.writerows(rows)
    return rows


# -- commands -----------------------------------------------------------------------

def _cmd_synth(args) -> None:
    periods = DEFAULT_PERIODS if args.periods is None else _float_list(args.periods, "periods")
    frame = synth_generate(args.seed, args.L, args.dx, periods, args.trend_slope, args.noise_std,
                           args.interval)
    write_csv(frame, args.out)
    print(f"wrote {len(frame)} rows x {frame.d_x} variables to {args.out}")


def _model_overrides(args) -> dict:
    return {f.name: getattr(args, f.name) for f in fields(ModelConfig) if f.name not in _DERIVED}


def _load_frame(path, target=None):
    if path is None:
        raise UsageError("--data is required")
    return load_csv(path, target_name=target)


def _cmd_train(args) -> None:
    run = parse_config(args.config, {**_model_overrides(args), "data": args.data, "target": args.target,
                                     "split": args.split, "out_dir": args.out_dir})
    frame = _load_frame(run.data, run.target)
    ckpt, history = train(frame, run.model, run.split)
    out = Path(run.out_dir)
    save_checkpoint(ckpt, out / "checkpoint")
    write_history(history, out / "history.csv")
    best = min(h["val_mse"] for h in history)
    print(f"trained {len(history)} epochs; best val fused MSE {best:.6f}; checkpoint in {out / 'checkpoint'}")


def _cmd_eval(args) -> None:
    ckpt = load_checkpoint(args.checkpoint)
    frame = _load_frame(args.data, ckpt.variable_names[ckpt.target_index])
    fractions = _parse_split(args.split) if args.split else DEFAULT_FRACTIONS
    prep = prepare(frame, ckpt.config, fractions, stats=ckpt.stats)
    ds = prep.datasets[args.which]
    result = evaluate(ckpt, ds, n_samples=args.n_samples, seed=args.seed)
    result["persistence"] = persistence_metrics(ds)
    with open(args.out, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["split", "head", "mse", "mae"])
        for head in (*HEADS, "persistence"):
            wr.writerow([args.which, head, repr(result[head]["mse"]), repr(result[head]["mae"])])
    print(" ".join(f"{h}: mse={result[h]['mse']:.6f} mae={result[h]['mae']:.6f}"
                   for h in (*HEADS, "persistence")))


def _cmd_predict(args) -> None:
    ckpt = load_checkpoint(args.checkpoint)
    frame = _load_frame(args.data, ckpt.variable_names[ckpt.target_index])
    pred = predict(ckpt, frame, n_samples=args.n_samples, seed=args.seed, stride=args.stride,
                   path=args.out)
    print(f"wrote {len(pred.starts)} windows to {args.out}")


def _float_list(text: str, what: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"{what} must be comma-separated numbers, got {text!r}") from None


def _cmd_bench(args) -> None:
    lengths = [int(v) for v in _float_list(args.lengths, "lengths")]
    rows = bench_attention(lengths, args.trials, args.w, args.d, args.heads, args.warmup,
                           args.seed, args.out)
    for r in rows:
        print(f"L={r['L']:>6} {r['variant']:>6} {r['mean_ms']:10.3f} ms {r['peak_bytes']:>12} B")


# -- parser -------------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would exit with status 2
        raise UsageError(message)


def _flag_type(hint):
    args = typing.get_args(hint)
    base = next((a for a in args if a is not type(None)), hint) if args else hint
    return base


def _add_model_flags(p: argparse.ArgumentParser) -> None:
    hints = typing.get_type_hints(ModelConfig)
    g = p.add_argument_group("model overrides (take precedence over --config)")
    for f in fields(ModelConfig):
        if f.name in _DERIVED:
            continue
        g.add_argument(_flag(f.name), dest=f.name, type=_flag_type(hints[f.name]), default=None,
                       metavar=f.name.upper())


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="conformer",
                     description="Long-horizon time-series forecasting with a windowed-attention recurrent model.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("synth", help="write a synthetic sinusoidal series")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--L", type=int, required=True, help="number of rows")
    p.add_argument("--dx", type=int, required=True, help="number of variables")
    p.add_argument("--periods", help="comma-separated periods, cycled over variables")
    p.add_argument("--trend-slope", type=float, default=0.0)
    p.add_argument("--noise-std", type=float, default=0.1)
    p.add_argument("--interval", type=int, default=3600, help="sampling interval in seconds")
    p.add_argument("--out", default="synth.csv")
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("train", help="fit a model and write a checkpoint plus history")
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--data", help="input CSV (date column first)")
    p.add_argument("--target", help="target column (default: last)")
    p.add_argument("--split", help="train,val,test fractions (default 0.7,0.1,0.2)")
    p.add_argument("--out-dir", help="output directory (default: run)")
    _add_model_flags(p)
    p.set_defaults(func=_cmd_train)

    for name, func, helptext in (("eval", _cmd_eval, "metrics on one split"),
                                 ("predict", _cmd_predict, "forecast CSV for every window")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--checkpoint", required=True, help="checkpoint directory")
        p.add_argument("--data", required=True, help="input CSV")
        p.add_argument("--n-samples", type=int, default=None, help="flow draws per window")
        p.add_argument("--seed", type=int, default=None)
        if name == "eval":
            p.add_argument("--split", help="train,val,test fractions (default 0.7,0.1,0.2)")
            p.add_argument("--which", choices=("train", "val", "test"), default="test")
            p.add_argument("--out", default="metrics.csv")
        else:
            p.add_argument("--stride", type=int, default=1)
            p.add_argument("--out", default="predictions.csv")
        p.set_defaults(func=func)

    p = sub.add_parser("bench", help="time banded against dense windowed attention")
    p.add_argument("--lengths", default="512,1024,2048,4096")
    p.add_argument("--trials", type=int, default=20)
    p.add_argument("--warmup", type=int, default=10)
    p.add_argument("--w", type=int, default=32)
    p.add_argument("--d", type=int, default=32)
    p.add_argument("--heads", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="bench.csv")
    p.set_defaults(func=_cmd_bench)
    return parser


def run_command(argv=None) -> int:
    """Run one subcommand; returns the process exit code."""
    argv = sys.argv[1:] if argv is None else list(argv)
    stage = argv[0] if argv and argv[0] in COMMANDS else "args"
    try:
        args = build_parser().parse_args(argv)
        stage = args.command
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        args.func(args)
    except ConformerError as exc:
        return _fail(stage, exc, exc.exit_code)
    except OSError as exc:
        return _fail(stage, exc, DataError.exit_code)
    except ValueError as exc:
        return _fail(stage, exc, UsageError.exit_code)
    return 0


def _fail(stage: str, exc: BaseException, code: int) -> int:
    msg = " ".join(str(exc).split()) or type(exc).__name__
    print(f"conformer {stage}: {msg}", file=sys.stderr)
    return code


def main() -> None:
    sys.exit(run_command())


if __name__ == "__main__":
    main()
