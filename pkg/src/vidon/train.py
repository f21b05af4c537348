"""Training loop: Adam with MSE, halving LR schedule, best-validation
checkpoint selection, and the relative-L2 evaluation metric.

fit() consumes duck-typed samples exposing sensor_coords, sensor_values,
query_coords and target_values; batching is exact for ragged sensor sets
(per-sample losses averaged, never padded).
"""

from __future__ import annotations

import hashlib
import io
import json
import math
import struct
import time
from dataclasses import dataclass, field, asdict

import numpy as np

from . import model as M
from . import tensor as T
from .model import DeeponetParams, SensorSet, VidonParams, VidonSpec
from .tensor import GradientTape, Tensor

__all__ = [
    "TrainConfig",
    "AdamState",
    "Checkpoint",
    "CheckpointError",
    "mse_loss",
    "adam_step",
    "lr_at",
    "relative_l2",
    "fit",
    "save_checkpoint",
    "load_checkpoint",
    "config_hash",
]

CHECKPOINT_MAGIC = b"VIDC"
CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    """Malformed checkpoint file."""


@dataclass(frozen=True)
class TrainConfig:
    lr0: float = 1e-4
    halve_at: tuple[int, ...] = (20_000, 40_000, 60_000, 80_000)
    weight_decay: float = 1e-9
    max_epochs: int = 1000
    batch_size: int = 16
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    decoupled_decay: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.lr0 <= 0:
            raise ValueError("lr0 must be positive")
        if any(b <= a for a, b in zip(self.halve_at, self.halve_at[1:])):
            raise ValueError("halve_at must be strictly increasing")


def lr_at(epoch: int, cfg: TrainConfig) -> float:
    halvings = sum(1 for e in cfg.halve_at if e <= epoch)
    return cfg.lr0 * 0.5 ** halvings


def mse_loss(pred: Tensor, target: Tensor) -> Tensor:
    if pred.shape != target.shape:
        raise T.DimensionError(f"mse shapes differ: {pred.shape} vs {target.shape}")
    diff = T.sub(pred, target)
    return T.tmean(T.mul(diff, diff))


@dataclass
class AdamState:
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: list[Tensor], grads: list[np.ndarray], state: AdamState,
              lr: float, weight_decay: float = 0.0, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8,
              decoupled: bool = False) -> list[Tensor]:
    """One Adam update; returns fresh parameter tensors (inputs untouched).

    Weight decay defaults to the classic L2 form (lambda * theta added to the
    gradient); the decoupled variant subtracts lr * lambda * theta instead.
    """
    state.step += 1
    t = state.step
    bc1 = 1.0 - beta1 ** t
    bc2 = 1.0 - beta2 ** t
    out = []
    for i, (p, g) in enumerate(zip(params, grads)):
        g = np.asarray(g, dtype=np.float64)
        if g.shape != p.shape:
            raise T.DimensionError(f"gradient shape {g.shape} != param {p.shape}")
        if weight_decay != 0.0 and not decoupled:
            g = g + weight_decay * p.array
        m = state.m.get(i)
        v = state.v.get(i)
        if m is None:
            m = np.zeros_like(p.array)
            v = np.zeros_like(p.array)
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * (g * g)
        state.m[i] = m
        state.v[i] = v
        update = lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
        new = p.array - update
        if weight_decay != 0.0 and decoupled:
            new = new - lr * weight_decay * p.array
        out.append(Tensor(new))
    return out


def relative_l2(pred: np.ndarray, target: np.ndarray) -> float:
    """||pred - target||_2 / ||target||_2 over the query grid."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise T.DimensionError(f"shapes differ: {pred.shape} vs {target.shape}")
    denom = float(np.linalg.norm(target))
    if denom == 0.0:
        raise ValueError("relative L2 undefined for a zero target")
    return float(np.linalg.norm(pred - target)) / denom


def config_hash(obj) -> str:
    """sha256 of the canonical JSON encoding of a config-like object."""
    blob = json.dumps(obj, sort_keys=True, default=_json_default).encode()
    return hashlib.sha256(blob).hexdigest()


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, tuple):
        return list(o)
    if hasattr(o, "__dict__"):
        return o.__dict__
    return str(o)


# ---------------------------------------------------------------------------
# batched forward/loss helpers


def _sensor_set(sample) -> SensorSet:
    return SensorSet(sample.sensor_coords, sample.sensor_values)


def _shared_queries(samples) -> np.ndarray | None:
    """The common query array if every sample uses identical queries."""
    first = samples[0].query_coords
    for s in samples[1:]:
        if s.query_coords.shape != first.shape or not np.array_equal(s.query_coords, first):
            return None
    return first


@dataclass
class PreparedBatch:
    """Static per-batch arrays reused across epochs (sample content is fixed)."""

    coords: np.ndarray
    values: np.ndarray
    sensor_bounds: np.ndarray
    shared_queries: np.ndarray | None
    stacked_targets: np.ndarray | None      # (B, q) when queries are shared
    query_concat: np.ndarray | None
    query_bounds: np.ndarray | None
    target_concat: np.ndarray | None
    loss_weights: np.ndarray | None         # 1 / (B * q_s) per sample
    values_matrix: np.ndarray | None = None  # (B, m*d_v) in stored order, fixed-m only


def prepare_batch(samples) -> PreparedBatch:
    sets = [_sensor_set(s).canonical() for s in samples]
    coords = np.concatenate([s.coords for s in sets], axis=0)
    values = np.concatenate([s.values for s in sets], axis=0)
    sensor_bounds = np.cumsum([0] + [s.m for s in sets])
    m0 = samples[0].sensor_values.size
    values_matrix = (np.stack([s.sensor_values.ravel() for s in samples])
                     if all(s.sensor_values.size == m0 for s in samples) else None)
    shared = _shared_queries(samples)
    if shared is not None:
        return PreparedBatch(
            coords, values, sensor_bounds, shared,
            np.stack([s.target_values[:, 0] for s in samples]),
            None, None, None, None, values_matrix)
    q_all = np.concatenate([s.query_coords for s in samples], axis=0)
    q_bounds = np.cumsum([0] + [s.query_coords.shape[0] for s in samples])
    targets = np.concatenate([s.target_values for s in samples], axis=0)
    weights = 1.0 / (len(samples) * np.diff(q_bounds).astype(np.float64))
    return PreparedBatch(coords, values, sensor_bounds, None, None,
                         q_all, q_bounds, targets, weights[:, None], values_matrix)


def _branch_coefficients(params, prep: PreparedBatch) -> Tensor:
    if isinstance(params, DeeponetParams):
        if prep.values_matrix is None:
            raise ValueError("the fixed-sensor baseline needs equal sensor counts")
        if prep.values_matrix.shape[1] != params.spec.m_fixed * params.spec.d_v:
            raise ValueError(
                f"baseline expects {params.spec.m_fixed} sensors, "
                f"dataset provides {prep.values_matrix.shape[1]}")
        from . import nn
        return nn.forward(params.branch_net, Tensor(prep.values_matrix))
    return M.branch_batch_arrays(params, prep.coords, prep.values, prep.sensor_bounds)


def batch_loss(params, samples, prep: PreparedBatch | None = None) -> Tensor:
    """Mean over samples of each sample's mean-squared error over its queries."""
    if prep is None:
        prep = prepare_batch(samples)
    beta = _branch_coefficients(params, prep)                # (B, p)
    p = params.spec.p
    if prep.shared_queries is not None:
        trunk = nn_forward_trunk(params, prep.shared_queries)
        tau0 = T.slice_cols(trunk, 0, 1)
        basis = T.slice_cols(trunk, 1, p + 1)
        pred = T.add(T.matmul(beta, T.transpose(basis)),
                     T.reshape(tau0, (prep.shared_queries.shape[0],)))
        return mse_loss(pred, Tensor(prep.stacked_targets))
    # ragged queries: run the trunk once on the concatenation, reduce per segment
    trunk = nn_forward_trunk(params, prep.query_concat)
    tau0 = T.slice_cols(trunk, 0, 1)
    basis = T.slice_cols(trunk, 1, p + 1)
    beta_rows = T.segment_repeat(beta, prep.query_bounds)    # (Q, p)
    pred = T.add(T.tsum(T.mul(basis, beta_rows), axis=1), tau0)
    diff = T.sub(pred, Tensor(prep.target_concat))
    per_sample = T.segment_sum(T.mul(diff, diff), prep.query_bounds)
    return T.tsum(T.mul(per_sample, Tensor(prep.loss_weights)))


def nn_forward_trunk(params: VidonParams, queries: np.ndarray) -> Tensor:
    return M.trunk_forward(params, queries)


def evaluate_relative_l2(params, samples, denorm=None) -> tuple[float, float]:
    """Mean and standard deviation of per-sample relative L2 errors."""
    queries = [s.query_coords for s in samples]
    if isinstance(params, DeeponetParams):
        mat = np.stack([s.sensor_values.ravel() for s in samples])
        preds = M.deeponet_predict_batch(params, mat, queries)
    else:
        sets = [_sensor_set(s) for s in samples]
        preds = M.predict_batch(params, sets, queries)
    errs = []
    for s, pred in zip(samples, preds):
        target = s.target_values
        if denorm is not None:
            pred = denorm(pred)
        errs.append(relative_l2(pred, target))
    errs = np.array(errs)
    return float(errs.mean()), float(errs.std())


# ---------------------------------------------------------------------------
# fit loop


@dataclass
class Checkpoint:
    spec: object                  # VidonSpec or DeeponetSpec
    names: list[str]
    arrays: list[np.ndarray]
    epoch: int
    val_rel_l2: float
    cfg_hash: str

    def build_params(self):
        if isinstance(self.spec, M.DeeponetSpec):
            params = M.init_deeponet(self.spec, np.random.default_rng(0))
        else:
            params = M.init_vidon(self.spec, np.random.default_rng(0))
        by_name = dict(zip(self.names, self.arrays))
        _load_named(params, by_name)
        return params


def _load_named(params, by_name: dict) -> None:
    holders = {name: t for name, t in params.tensors()}
    if set(holders) != set(by_name):
        raise CheckpointError("checkpoint parameter names do not match the spec")
    for name, holder in holders.items():
        arr = by_name[name]
        if arr.shape != holder.shape:
            raise CheckpointError(f"shape mismatch for {name}")
        holder.array = np.ascontiguousarray(arr, dtype=np.float64)


def _snapshot(params: VidonParams) -> tuple[list[str], list[np.ndarray]]:
    names, arrays = [], []
    for name, t in params.tensors():
        names.append(name)
        arrays.append(t.array.copy())
    return names, arrays


def fit(params: VidonParams, train_samples, val_samples, cfg: TrainConfig,
        metrics_path=None, denorm=None, start_epoch: int = 0,
        log_every: int | None = None) -> Checkpoint:
    """Train in place and return the checkpoint with the best validation error.

    One epoch is one pass over the training set in seeded shuffled order,
    batch_size samples per optimizer step. Validation relative L2 is
    measured every epoch on (denormalized, when denorm is given) predictions.
    """
    named = list(params.tensors())
    names = [n for n, _ in named]
    state = AdamState()
    cfg_h = config_hash(asdict(cfg))
    metrics = io.StringIO()
    metrics.write("epoch,train_mse,val_rel_l2,lr,seconds\n")

    def validate() -> float:
        mean, _ = evaluate_relative_l2(params, val_samples, denorm=denorm)
        return mean

    best_val = validate()
    best = Checkpoint(params.spec, *_snapshot(params), epoch=start_epoch,
                      val_rel_l2=best_val, cfg_hash=cfg_h)
    n = len(train_samples)
    bs = max(1, min(cfg.batch_size, n))
    prep_cache: dict[tuple, PreparedBatch] = {}
    t0 = time.perf_counter()
    for epoch in range(start_epoch, cfg.max_epochs):
        lr = lr_at(epoch, cfg)
        order = np.random.default_rng(
            np.random.SeedSequence([cfg.seed, 7771, epoch])).permutation(n)
        epoch_losses = []
        for lo in range(0, n, bs):
            batch = [train_samples[i] for i in order[lo:lo + bs]]
            key = tuple(int(i) for i in order[lo:lo + bs])
            prep = prep_cache.get(key)
            if prep is None:
                prep = prepare_batch(batch)
                if bs >= n or len(prep_cache) < 64:
                    prep_cache[key] = prep
            with GradientTape() as tape:
                M.watch_model(tape, params)
                loss = batch_loss(params, batch, prep)
                loss_val = loss.item()
                grads = T.backward(loss)
            if not math.isfinite(loss_val):
                gmax = max(np.abs(g.array).max() for g in grads.values())
                raise FloatingPointError(
                    f"non-finite loss at epoch {epoch}, batch {lo // bs}, "
                    f"max |grad| {gmax:.3e}")
            tensors = [t for _, t in named]
            updated = adam_step(tensors, [grads[t].array for t in tensors], state,
                                lr, cfg.weight_decay, cfg.beta1, cfg.beta2,
                                cfg.eps, cfg.decoupled_decay)
            for (name, holder), new in zip(named, updated):
                holder.array = new.array
            epoch_losses.append(loss_val)
        val = validate()
        seconds = time.perf_counter() - t0
        metrics.write(f"{epoch},{np.mean(epoch_losses):.12e},{val:.12e},{lr:.6e},{seconds:.3f}\n")
        if log_every and (epoch % log_every == 0 or epoch == cfg.max_epochs - 1):
            print(f"epoch {epoch}: train_mse {np.mean(epoch_losses):.4e} "
                  f"val_rel_l2 {val:.4e} lr {lr:.2e}", flush=True)
        if val < best.val_rel_l2:
            best = Checkpoint(params.spec, *_snapshot(params), epoch=epoch,
                              val_rel_l2=val, cfg_hash=cfg_h)
    if metrics_path is not None:
        with open(metrics_path, "w") as fh:
            fh.write(metrics.getvalue())
    return best


# ---------------------------------------------------------------------------
# checkpoint serialization: magic, version, config hash, named f64 blocks


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    header = {
        "spec": asdict(ckpt.spec),
        "spec_type": "deeponet" if isinstance(ckpt.spec, M.DeeponetSpec) else "vidon",
        "epoch": ckpt.epoch,
        "val_rel_l2": ckpt.val_rel_l2,
        "cfg_hash": ckpt.cfg_hash,
    }
    hblob = json.dumps(header, sort_keys=True, default=_json_default).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        fh.write(struct.pack("<I", len(hblob)))
        fh.write(hblob)
        fh.write(struct.pack("<I", len(ckpt.names)))
        for name, arr in zip(ckpt.names, ckpt.arrays):
            nb = name.encode()
            fh.write(struct.pack("<H", len(nb)))
            fh.write(nb)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        if fh.read(4) != CHECKPOINT_MAGIC:
            raise CheckpointError(f"{path}: bad magic, not a checkpoint file")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != CHECKPOINT_VERSION:
            raise CheckpointError(f"{path}: unsupported version {version}")
        (hlen,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(hlen).decode())
        spec_d = header["spec"]
        for key, value in list(spec_d.items()):
            if isinstance(value, list):
                spec_d[key] = tuple(value)
        if header.get("spec_type") == "deeponet":
            spec = M.DeeponetSpec(**spec_d)
        else:
            spec = VidonSpec(**spec_d)
        (n_blocks,) = struct.unpack("<I", fh.read(4))
        names, arrays = [], []
        for _ in range(n_blocks):
            (nlen,) = struct.unpack("<H", fh.read(2))
            names.append(fh.read(nlen).decode())
            (ndim,) = struct.unpack("<I", fh.read(4))
            shape = struct.unpack(f"<{ndim}I", fh.read(4 * ndim))
            count = int(np.prod(shape)) if shape else 1
            raw = fh.read(8 * count)
            if len(raw) != 8 * count:
                raise CheckpointError(f"{path}: truncated block {names[-1]}")
            arrays.append(np.frombuffer(raw, dtype="<f8").reshape(shape).copy())
    return Checkpoint(spec=spec, names=names, arrays=arrays, epoch=header["epoch"],
                      val_rel_l2=header["val_rel_l2"], cfg_hash=header["cfg_hash"])
