"""Encoder/decoder assembly, combined loss, training, evaluation, prediction and checkpoints."""

from __future__ import annotations

import csv
import json
import logging
import time
import typing
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Callable

import numpy as np

from . import numcore as nc
from .attention import MhaParams, multi_head_attention
from .dataio import (
    SeriesFrame,
    StandardizeStats,
    WindowBatch,
    WindowDataset,
    active_scales,
    calendar_features,
    fit_stats,
    split,
    standardize,
)
from .errors import DataError, NumericError, UsageError
from .inputrep import VARIANTS, InputRepresentation
from .normflow import LATENT_LAYERS, NF_VARIANTS, FlowParams, flow_forecast
from .numcore import LayerNorm, Linear, Module, Tensor
from .sirn import SirnLayer

log = logging.getLogger(__name__)

FORMAT_VERSION = 1
MODES = ("multivariate", "univariate")
ATTN_IMPLS = ("banded", "dense")
MAX_TRANSFORMS = 8
DEFAULT_FRACTIONS = (0.7, 0.1, 0.2)


@dataclass(frozen=True)
class ModelConfig:
    """Every model and training hyperparameter. ``d_x`` and ``scales`` are filled from data."""

    d: int = 64
    n_heads: int = 4
    w: int = 2
    lam: float = 0.8
    eta: int = 2
    decomp_kernel: int = 25
    k_v: int = 3
    seasonal_kernel: int = 3
    n_transforms: int = 2
    e_layers: int = 2
    d_layers: int = 1
    enc_gru_layers: int = 1
    dec_gru_layers: int | None = None
    L_x: int = 96
    L_y: int = 24
    L_tok: int | None = None
    mode: str = "multivariate"
    input_variant: str = "full"
    nf_variant: str = "flow"
    enc_latent: str = "last"
    dec_latent: str = "last"
    attn_impl: str = "banded"
    lr: float = 1e-4
    batch_size: int = 32
    max_epochs: int = 10
    patience: int = 3
    n_samples: int = 16
    seed: int = 0
    d_x: int | None = None
    scales: tuple[str, ...] | None = None

    # -- derived --------------------------------------------------------------
    @property
    def token_len(self) -> int:
        return self.L_x // 2 if self.L_tok is None else self.L_tok

    @property
    def dec_len(self) -> int:
        return self.token_len + self.L_y

    @property
    def dec_gru(self) -> int:
        if self.dec_gru_layers is not None:
            return self.dec_gru_layers
        return 2 if self.mode == "multivariate" else 1

    @property
    def d_t(self) -> int:
        if self.d_x is None:
            raise UsageError("d_x is not set; bind the config to data first")
        return self.d_x if self.mode == "multivariate" else 1

    # -- validation -----------------------------------------------------------
    def validate(self) -> "ModelConfig":
        def need(cond: bool, msg: str) -> None:
            if not cond:
                raise UsageError(msg)

        need(self.w > 0 and self.w % 2 == 0, f"window size must be even (w={self.w})")
        need(self.d > 0 and self.n_heads > 0, "d and n_heads must be positive")
        need(self.d % self.n_heads == 0, f"d={self.d} must be divisible by n_heads={self.n_heads}")
        need(0.0 <= self.lam <= 1.0, f"lambda must lie in [0, 1], got {self.lam}")
        need(self.eta >= 1, "eta must be at least 1")
        need(self.L_x >= 2 and self.L_y >= 1, "L_x must be at least 2 and L_y at least 1")
        need(0 <= self.token_len <= self.L_x, f"L_tok must lie in [0, L_x], got {self.L_tok}")
        for name in ("decomp_kernel", "k_v", "seasonal_kernel"):
            k = getattr(self, name)
            need(k >= 1 and k % 2 == 1, f"{name} must be odd and positive, got {k}")
        shortest = min(self.L_x, self.dec_len)
        need(self.decomp_kernel <= 2 * shortest - 1,
             f"decomp_kernel={self.decomp_kernel} exceeds 2*{shortest}-1 for the shortest sequence")
        need(0 <= self.n_transforms <= MAX_TRANSFORMS, f"n_transforms must lie in [0, {MAX_TRANSFORMS}]")
        need(self.e_layers >= 1 and self.d_layers >= 1, "need at least one encoder and decoder layer")
        need(self.enc_gru_layers >= 1 and self.dec_gru >= 1, "GRU depth must be at least 1")
        need(self.mode in MODES, f"mode must be one of {MODES}")
        need(self.input_variant in VARIANTS, f"input_variant must be one of {VARIANTS}")
        need(self.nf_variant in NF_VARIANTS, f"nf_variant must be one of {NF_VARIANTS}")
        need(self.enc_latent in LATENT_LAYERS and self.dec_latent in LATENT_LAYERS,
             f"latent selections must be one of {LATENT_LAYERS}")
        need(self.attn_impl in ATTN_IMPLS, f"attn_impl must be one of {ATTN_IMPLS}")
        need(self.lr >= 0, "learning rate must be non-negative")
        need(self.batch_size >= 1 and self.max_epochs >= 1 and self.patience >= 1,
             "batch_size, max_epochs and patience must be positive")
        need(self.n_samples >= 1, "n_samples must be at least 1")
        need(self.d_x is None or self.d_x >= 1, "d_x must be positive")
        return self

    # -- (de)serialization --------------------------------------------------
    def to_dict(self) -> dict:
        out = asdict(self)
        if self.scales is not None:
            out["scales"] = list(self.scales)
        return out

    @classmethod
    def from_dict(cls, raw: dict) -> "ModelConfig":
        """Typed construction; unknown keys and type mismatches raise :class:`UsageError`."""
        raw = dict(raw)
        if "lambda" in raw:
            raw["lam"] = raw.pop("lambda")
        hints = typing.get_type_hints(cls)
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(raw) - known)
        if unknown:
            raise UsageError(f"unknown config keys: {', '.join(unknown)}")
        kwargs = {k: _coerce(k, v, hints[k]) for k, v in raw.items()}
        return cls(**kwargs).validate()

    def bind(self, frame: SeriesFrame) -> "ModelConfig":
        """Fill ``d_x`` and calendar scales from a frame."""
        return replace(self, d_x=frame.d_x, scales=active_scales(frame.interval_seconds)).validate()


def _coerce(key: str, value, hint):
    args = typing.get_args(hint)
    optional = type(None) in args
    if value is None:
        if optional:
            return None
        raise UsageError(f"config key {key!r} may not be null")
    base = next((a for a in args if a is not type(None)), hint) if args else hint
    origin = typing.get_origin(base)
    if origin is tuple:
        if not isinstance(value, (list, tuple)) or not all(isinstance(v, str) for v in value):
            raise UsageError(f"config key {key!r} expects a list of strings")
        return tuple(value)
    if base is bool or isinstance(value, bool):
        raise UsageError(f"config key {key!r} has wrong type {type(value).__name__}")
    if base is float and isinstance(value, (int, float)):
        return float(value)
    if base is int and isinstance(value, int):
        return value
    if base is str and isinstance(value, str):
        return value
    raise UsageError(f"config key {key!r} expects {base.__name__}, got {type(value).__name__}")


# -- network --------------------------------------------------------------------

@dataclass
class ForecastResult:
    y_dec: Tensor
    z_out: Tensor
    variance: np.ndarray
    fused: Tensor


class Conformer(Module):
    def __init__(self, config: ModelConfig, rng: np.random.Generator | None = None):
        config.validate()
        if config.d_x is None or config.scales is None:
            raise UsageError("config must be bound to data (d_x, scales) before building a model")
        rng = rng if rng is not None else np.random.default_rng(config.seed)
        self.config = config
        c = config
        self.enc_rep = InputRepresentation(c.d_x, c.d, c.L_x, c.scales, c.k_v, c.input_variant, rng)
        self.dec_rep = InputRepresentation(c.d_x, c.d, c.dec_len, c.scales, c.k_v, c.input_variant, rng)

        def sirn(gru_layers: int) -> SirnLayer:
            return SirnLayer(c.d, c.n_heads, c.w, c.eta, c.decomp_kernel, gru_layers, rng,
                             seasonal_kernel=c.seasonal_kernel, attn_impl=c.attn_impl)

        self.encoder = [sirn(c.enc_gru_layers) for _ in range(c.e_layers)]
        self.enc_norms = [LayerNorm(c.d) for _ in range(c.e_layers)]
        self.decoder = [sirn(c.dec_gru) for _ in range(c.d_layers)]
        self.dec_norms = [LayerNorm(c.d) for _ in range(c.d_layers)]
        self.cross = MhaParams(c.d, c.n_heads, rng)
        self.cross_norm = LayerNorm(c.d)
        self.head = Linear(c.d, c.d_t, rng)
        self.flow = FlowParams(c.d, c.d_t, c.n_transforms, rng) if c.nf_variant != "none" else None

    def forward(self, batch: WindowBatch, n_samples: int = 1, rng: np.random.Generator | None = None,
                eps: np.ndarray | None = None) -> ForecastResult:
        c = self.config
        if batch.enc_x.shape[-2:] != (c.L_x, c.d_x) or batch.dec_x.shape[-2:] != (c.dec_len, c.d_x):
            raise ValueError(f"batch shapes enc {batch.enc_x.shape} / dec {batch.dec_x.shape} do not "
                             f"match config (L_x={c.L_x}, decoder length={c.dec_len}, d_x={c.d_x})")
        x = self.enc_rep(batch.enc_x, batch.enc_marks)
        enc_states = []
        for layer, norm in zip(self.encoder, self.enc_norms):
            x, s = layer(x)
            x = norm(x)
            enc_states.append(s)
        h = self.dec_rep(batch.dec_x, batch.dec_marks)
        dec_states = []
        for layer, norm in zip(self.decoder, self.dec_norms):
            h, s = layer(h)
            h = norm(h)
            dec_states.append(s)
        h = self.cross_norm(h + multi_head_attention(h, x, self.cross))
        y_dec = self.head(h)[..., -c.L_y:, :]

        if self.flow is None:
            # without a flow head both heads coincide; skip the rounding of the convex mix
            return ForecastResult(y_dec, y_dec, np.zeros(y_dec.shape), y_dec)
        h_e = enc_states[0 if c.enc_latent == "first" else -1]
        h_d = dec_states[0 if c.dec_latent == "first" else -1]
        z_out, variance = flow_forecast(h_e, h_d, self.flow, c.L_y, n_samples, rng, c.nf_variant, eps)
        fused = c.lam * y_dec + (1.0 - c.lam) * z_out
        return ForecastResult(y_dec, z_out, variance, fused)

    __call__ = forward

    def loss(self, result: ForecastResult, target) -> Tensor:
        lam = self.config.lam
        return lam * nc.mse(result.y_dec, target) + (1.0 - lam) * nc.mse(result.z_out, target)


# -- optimizer ------------------------------------------------------------------

class Adam:
    def __init__(self, params, lr: float, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p.data = p.data - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


# -- data plumbing --------------------------------------------------------------

@dataclass
class Checkpoint:
    """A trained model with the data context needed to reuse it."""

    model: Conformer
    stats: StandardizeStats
    variable_names: tuple[str, ...]
    target_index: int
    interval_seconds: int

    @property
    def config(self) -> ModelConfig:
        return self.model.config

    @property
    def target_columns(self) -> list[int]:
        if self.config.mode == "multivariate":
            return list(range(len(self.variable_names)))
        return [self.target_index]


@dataclass
class Prepared:
    frame: SeriesFrame  # standardized
    stats: StandardizeStats
    ranges: dict
    datasets: dict


def prepare(frame: SeriesFrame, config: ModelConfig, fractions=DEFAULT_FRACTIONS,
            stats: StandardizeStats | None = None) -> Prepared:
    """Split, standardize with training statistics and build one window set per split."""
    ranges = split(frame, fractions=fractions)
    stats = stats if stats is not None else fit_stats(frame, ranges["train"])
    std = standardize(frame, stats)
    datasets = {}
    for name, rng_ in ranges.items():
        try:
            datasets[name] = WindowDataset(std, config.L_x, config.L_y, config.token_len,
                                           mode=config.mode, target_range=rng_)
        except DataError as exc:
            raise DataError(f"{name} split: {exc}") from exc
    return Prepared(std, stats, ranges, datasets)


def _batches(n: int, size: int, order: np.ndarray | None = None):
    idx = np.arange(n) if order is None else order
    for lo in range(0, n, size):
        yield idx[lo:lo + size]


def _stream(seed: int, purpose: int) -> np.random.Generator:
    return np.random.default_rng([seed, purpose])


SHUFFLE_STREAM, NOISE_STREAM, EVAL_STREAM = 1, 2, 3


# -- training -------------------------------------------------------------------

def train(frame: SeriesFrame, config: ModelConfig, fractions=DEFAULT_FRACTIONS,
          on_epoch: Callable[[dict], None] | None = None) -> tuple[Checkpoint, list[dict]]:
    """Fit on the training split with early stopping on validation fused MSE.

    Returns the best-validation checkpoint and one history record per epoch.
    """
    config = config.bind(frame)
    prep = prepare(frame, config, fractions)
    model = Conformer(config)
    ckpt = Checkpoint(model, prep.stats, frame.variable_names, frame.target_index,
                      frame.interval_seconds)
    history = fit(ckpt, prep.datasets["train"], prep.datasets["val"], on_epoch)
    return ckpt, history


def fit(ckpt: Checkpoint, train_ds: WindowDataset, val_ds: WindowDataset,
        on_epoch: Callable[[dict], None] | None = None) -> list[dict]:
    model, c = ckpt.model, ckpt.config
    params = model.parameters()
    opt = Adam(params, c.lr)
    shuffle_rng = _stream(c.seed, SHUFFLE_STREAM)
    noise_rng = _stream(c.seed, NOISE_STREAM)
    best_val, best_params, stale = np.inf, [p.data.copy() for p in params], 0
    history = []
    for epoch in range(1, c.max_epochs + 1):
        t0 = time.perf_counter()
        total, count = 0.0, 0
        for step, idx in enumerate(_batches(len(train_ds), c.batch_size, shuffle_rng.permutation(len(train_ds)))):
            batch = train_ds.batch(idx)
            try:
                loss = model.loss(model(batch, 1, noise_rng), batch.target)
                loss.backward()
            except NumericError as exc:
                nc.get_tape().clear()
                raise NumericError(f"non-finite loss at epoch {epoch} step {step}: {exc}") from exc
            opt.step()
            opt.zero_grad()
            total += loss.item() * len(idx)
            count += len(idx)
        metrics = evaluate(ckpt, val_ds)
        val_mse = metrics["fused"]["mse"]
        record = {"epoch": epoch, "train_loss": total / count, "val_mse": val_mse,
                  "val_mae": metrics["fused"]["mae"], "seconds": time.perf_counter() - t0}
        history.append(record)
        log.info("epoch %d train_loss %.6f val_mse %.6f val_mae %.6f (%.1fs)", epoch,
                 record["train_loss"], val_mse, record["val_mae"], record["seconds"])
        if on_epoch is not None:
            on_epoch(record)
        if val_mse < best_val:
            best_val, best_params, stale = val_mse, [p.data.copy() for p in params], 0
        else:
            stale += 1
            if stale >= c.patience:
                log.info("early stop after epoch %d", epoch)
                break
    for p, data in zip(params, best_params):
        p.data = data
    return history


# -- evaluation -----------------------------------------------------------------

HEADS = ("decoder", "flow", "fused")


@dataclass
class Predictions:
    """Standardized per-window outputs, each ``(n_windows, L_y, d_t)``."""

    starts: np.ndarray
    y_dec: np.ndarray
    z_out: np.ndarray
    fused: np.ndarray
    variance: np.ndarray
    target: np.ndarray | None = None

    def head(self, name: str) -> np.ndarray:
        return {"decoder": self.y_dec, "flow": self.z_out, "fused": self.fused}[name]


def metrics(pred: np.ndarray, target: np.ndarray) -> dict:
    err = pred - target
    return {"mse": float(np.mean(err * err)), "mae": float(np.mean(np.abs(err)))}


def run_batches(ckpt: Checkpoint, batches, n_samples: int | None = None,
                seed: int | None = None) -> Predictions:
    c = ckpt.config
    n_samples = c.n_samples if n_samples is None else n_samples
    rng = _stream(c.seed if seed is None else seed, EVAL_STREAM)
    parts: dict[str, list] = {k: [] for k in ("starts", "y_dec", "z_out", "fused", "variance", "target")}
    with nc.no_grad():
        for batch in batches:
            res = ckpt.model(batch, n_samples, rng)
            parts["starts"].append(batch.starts)
            parts["y_dec"].append(res.y_dec.data)
            parts["z_out"].append(res.z_out.data)
            parts["fused"].append(res.fused.data)
            parts["variance"].append(res.variance)
            if batch.target is not None:
                parts["target"].append(batch.target)
    out = {k: np.concatenate(v) for k, v in parts.items() if v}
    return Predictions(**out)


def predict_dataset(ckpt: Checkpoint, ds: WindowDataset, n_samples: int | None = None,
                    seed: int | None = None, batch_size: int = 64) -> Predictions:
    if len(ds) == 0:
        raise DataError("no windows to evaluate")
    return run_batches(ckpt, (ds.batch(i) for i in _batches(len(ds), batch_size)), n_samples, seed)


def evaluate(ckpt: Checkpoint, ds: WindowDataset, n_samples: int | None = None,
             seed: int | None = None, return_predictions: bool = False):
    """MSE and MAE per head over every window and target coordinate (standardized units)."""
    pred = predict_dataset(ckpt, ds, n_samples, seed)
    out = {h: metrics(pred.head(h), pred.target) for h in HEADS}
    return (out, pred) if return_predictions else out


def persistence_metrics(ds: WindowDataset) -> dict:
    """Repeat the last observed value of each target variable across the horizon."""
    b = ds.all()
    last = b.enc_x[:, -1, :]
    if ds.mode == "univariate":
        ti = ds.frame.target_index
        last = last[:, ti:ti + 1]
    pred = np.repeat(last[:, None, :], ds.L_y, axis=1)
    return metrics(pred, b.target)


# -- prediction -----------------------------------------------------------------

def inference_batch(frame: SeriesFrame, starts: np.ndarray, config: ModelConfig) -> WindowBatch:
    """Windows whose horizon may run past the end of ``frame`` (standardized values).

    Future calendar marks are extrapolated at the frame's sampling interval.
    """
    L_x, L_y, L_tok = config.L_x, config.L_y, config.token_len
    n = len(frame)
    extra = max(0, int(starts.max()) + L_x + L_y - n)
    ts = np.concatenate([frame.timestamps,
                         frame.timestamps[-1] + frame.interval_seconds * np.arange(1, extra + 1)])
    marks = calendar_features(ts)
    enc_rows = starts[:, None] + np.arange(L_x)
    dec_rows = starts[:, None] + np.arange(L_x - L_tok, L_x + L_y)
    enc_x = frame.values[enc_rows]
    dec_x = np.zeros((len(starts), L_tok + L_y, frame.d_x))
    dec_x[:, :L_tok] = enc_x[:, L_x - L_tok:]
    return WindowBatch(enc_x, marks[enc_rows], dec_x, marks[dec_rows], None, starts=starts)


def predict(ckpt: Checkpoint, frame: SeriesFrame, n_samples: int | None = None,
            seed: int | None = None, stride: int = 1, path=None,
            batch_size: int = 64) -> Predictions:
    """Forecast every window of ``frame`` (raw units) and optionally write the CSV artifact.

    The CSV columns are ``window_start, horizon_step, variable, y_dec, z_out,
    fused, variance``; ``window_start`` is the row index of the first input
    step, forecasts are destandardized and the variance stays in standardized
    units.
    """
    c = ckpt.config
    if tuple(frame.variable_names) != tuple(ckpt.variable_names):
        raise DataError(f"frame variables {frame.variable_names} differ from the checkpoint's "
                        f"{ckpt.variable_names}")
    if len(frame) < c.L_x:
        raise DataError(f"series too short: {len(frame)} rows < L_x = {c.L_x}")
    if stride < 1:
        raise UsageError("stride must be positive")
    std = standardize(frame, ckpt.stats)
    starts = np.arange(0, len(frame) - c.L_x + 1, stride)
    batches = (inference_batch(std, starts[i], c) for i in _batches(len(starts), batch_size))
    pred = run_batches(ckpt, batches, n_samples, seed)
    if path is not None:
        write_predictions(ckpt, pred, path)
    return pred


def write_predictions(ckpt: Checkpoint, pred: Predictions, path) -> None:
    cols = ckpt.target_columns
    names = [ckpt.variable_names[j] for j in cols]
    y_dec, z_out, fused = (ckpt.stats.invert(a, cols) for a in (pred.y_dec, pred.z_out, pred.fused))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["window_start", "horizon_step", "variable", "y_dec", "z_out", "fused", "variance"])
        for i, s in enumerate(pred.starts):
            for h in range(y_dec.shape[1]):
                for j, name in enumerate(names):
                    w.writerow([int(s), h + 1, name, repr(float(y_dec[i, h, j])),
                                repr(float(z_out[i, h, j])), repr(float(fused[i, h, j])),
                                repr(float(pred.variance[i, h, j]))])


# -- checkpoints ----------------------------------------------------------------

MANIFEST = "manifest.json"
BLOB = "params.bin"


def save_checkpoint(ckpt: Checkpoint, directory) -> Path:
    """Write ``manifest.json`` and a little-endian float64 parameter blob."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries, chunks, offset = [], [], 0
    for name, p in ckpt.model.named_parameters():
        raw = np.ascontiguousarray(p.data, dtype="<f8").tobytes()
        entries.append({"name": name, "shape": list(p.shape), "offset": offset})
        chunks.append(raw)
        offset += len(raw)
    manifest = {
        "format_version": FORMAT_VERSION,
        "config": ckpt.config.to_dict(),
        "stats": {"mean": ckpt.stats.mean.tolist(), "std": ckpt.stats.std.tolist()},
        "variables": list(ckpt.variable_names),
        "target_index": ckpt.target_index,
        "interval_seconds": ckpt.interval_seconds,
        "params": entries,
        "blob_bytes": offset,
    }
    (directory / BLOB).write_bytes(b"".join(chunks))
    (directory / MANIFEST).write_text(json.dumps(manifest, indent=1))
    return directory


def load_checkpoint(directory) -> Checkpoint:
    directory = Path(directory)
    mpath = directory / MANIFEST
    if not mpath.is_file():
        raise UsageError(f"no checkpoint manifest at {mpath}")
    manifest = json.loads(mpath.read_text())
    version = manifest.get("format_version")
    if version != FORMAT_VERSION:
        raise UsageError(f"unsupported checkpoint format version {version!r}")
    config = ModelConfig.from_dict(manifest["config"])
    model = Conformer(config)
    blob = (directory / BLOB).read_bytes()
    if len(blob) != manifest["blob_bytes"]:
        raise UsageError("checkpoint parameter blob is truncated")
    entries = {e["name"]: e for e in manifest["params"]}
    named = dict(model.named_parameters())
    if set(entries) != set(named):
        raise UsageError("checkpoint parameters do not match the model built from its config")
    for name, p in named.items():
        e = entries[name]
        shape = tuple(e["shape"])
        if shape != p.shape:
            raise UsageError(f"parameter {name} has shape {shape}, model expects {p.shape}")
        count = int(np.prod(shape, dtype=np.int64))
        p.data = np.frombuffer(blob, dtype="<f8", count=count, offset=e["offset"]).astype(np.float64).reshape(shape)
    stats = StandardizeStats(np.array(manifest["stats"]["mean"], dtype=np.float64),
                             np.array(manifest["stats"]["std"], dtype=np.float64))
    return Checkpoint(model, stats, tuple(manifest["variables"]), int(manifest["target_index"]),
                      int(manifest["interval_seconds"]))


def write_history(history: list[dict], path) -> None:
    keys = ["epoch", "train_loss", "val_mse", "val_mae", "seconds"]
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=keys)
        w.writeheader()
        for rec in history:
            w.writerow({k: repr(rec[k]) if isinstance(rec[k], float) else rec[k] for k in keys})


__all__ = [
    "Adam", "Checkpoint", "Conformer", "ForecastResult", "ModelConfig", "Predictions", "Prepared",
    "evaluate", "fit", "inference_batch", "load_checkpoint", "metrics", "persistence_metrics",
    "predict", "predict_dataset", "prepare", "save_checkpoint", "train", "write_history",
    "write_predictions",
]
