"""Dataset assembly, normalization and serialization.

Records hold variable-length sensor sets plus query/target arrays. Two
interchangeable formats: JSONL (one record per line, nested arrays) and a
packed little-endian binary ("VIDN"). Builds are pure functions of
(config, master seed): field seeds derive from (seed, split, index), sensor
layouts from (seed, global sample index), so re-running a build reproduces
bit-identical files regardless of worker count.
"""

from __future__ import annotations

import json
import math
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import pde, sensors, spectral
from .config import ExperimentConfig, domain_for, query_dim

__all__ = [
    "OperatorSample",
    "DatasetMeta",
    "FormatError",
    "CorruptionError",
    "write_records",
    "read_records",
    "write_jsonl",
    "read_jsonl",
    "write_binary",
    "read_binary",
    "build_dataset",
    "load_meta",
    "load_split",
    "load_fields",
    "normalize_inputs",
    "normalize_targets",
    "denormalizer",
    "sensor_values_from_field",
    "SPLITS",
    "global_sensor_index",
]

MAGIC = b"VIDN"
FORMAT_VERSION = 1
SPLITS = ("train", "val", "test")
_SPLIT_TAGS = {"train": 0, "val": 1, "test": 2}


class FormatError(ValueError):
    """Wrong magic or version in a dataset file."""


class CorruptionError(ValueError):
    """Truncated or internally inconsistent dataset file."""


@dataclass
class OperatorSample:
    id: int
    sensor_coords: np.ndarray     # (m, d)
    sensor_values: np.ndarray     # (m, d_v)
    query_coords: np.ndarray      # (q, d_q)
    target_values: np.ndarray     # (q, d_u)

    def __post_init__(self):
        self.sensor_coords = np.ascontiguousarray(self.sensor_coords, dtype=np.float64)
        self.sensor_values = np.ascontiguousarray(self.sensor_values, dtype=np.float64)
        self.query_coords = np.ascontiguousarray(self.query_coords, dtype=np.float64)
        self.target_values = np.ascontiguousarray(self.target_values, dtype=np.float64)
        if self.sensor_coords.shape[0] != self.sensor_values.shape[0]:
            raise ValueError("sensor coords/values row mismatch")
        if self.query_coords.shape[0] != self.target_values.shape[0]:
            raise ValueError("query/target row mismatch")
        if self.sensor_coords.shape[0] < 1 or self.query_coords.shape[0] < 1:
            raise ValueError("need at least one sensor and one query")


@dataclass
class DatasetMeta:
    problem: str
    sensors: dict
    counts: dict
    normalization: dict           # {"input": [lo, hi], "output": [lo, hi]}
    master_seed: int
    format_version: int = FORMAT_VERSION
    sensor_ranges: tuple[int, int] = (0, 0)
    extras: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps({
            "format_version": self.format_version,
            "problem": self.problem,
            "sensors": self.sensors,
            "counts": self.counts,
            "normalization": self.normalization,
            "master_seed": self.master_seed,
            "sensor_ranges": list(self.sensor_ranges),
            "extras": self.extras,
        }, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "DatasetMeta":
        raw = json.loads(text)
        return cls(problem=raw["problem"], sensors=raw["sensors"], counts=raw["counts"],
                   normalization=raw["normalization"], master_seed=raw["master_seed"],
                   format_version=raw["format_version"],
                   sensor_ranges=tuple(raw["sensor_ranges"]), extras=raw["extras"])


# ---------------------------------------------------------------------------
# record serialization


def write_jsonl(path, samples) -> None:
    with open(path, "w") as fh:
        for s in samples:
            fh.write(json.dumps({
                "id": int(s.id),
                "coords": s.sensor_coords.tolist(),
                "values": s.sensor_values.tolist(),
                "query": s.query_coords.tolist(),
                "target": s.target_values.tolist(),
            }))
            fh.write("\n")


def read_jsonl(path) -> list[OperatorSample]:
    out = []
    with open(path) as fh:
        for line_no, line in enumerate(fh):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorruptionError(f"{path}:{line_no + 1}: bad JSON ({exc})") from exc
            out.append(OperatorSample(
                id=rec["id"], sensor_coords=rec["coords"], sensor_values=rec["values"],
                query_coords=rec["query"], target_values=rec["target"]))
    return out


def write_binary(path, samples) -> None:
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", FORMAT_VERSION))
        for s in samples:
            m, d = s.sensor_coords.shape
            _, d_v = s.sensor_values.shape
            q, d_q = s.query_coords.shape
            _, d_u = s.target_values.shape
            fh.write(struct.pack("<IIIHHHH", int(s.id), m, q, d, d_v, d_q, d_u))
            for arr in (s.sensor_coords, s.sensor_values, s.query_coords, s.target_values):
                fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def read_binary(path) -> list[OperatorSample]:
    out = []
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != MAGIC:
            raise FormatError(f"{path}: bad magic {magic!r}")
        head = fh.read(4)
        if len(head) != 4:
            raise CorruptionError(f"{path}: truncated at byte 4")
        (version,) = struct.unpack("<I", head)
        if version != FORMAT_VERSION:
            raise FormatError(f"{path}: unsupported version {version}")
        offset = 8
        while True:
            header = fh.read(20)
            if not header:
                break
            if len(header) != 20:
                raise CorruptionError(f"{path}: truncated record header at byte {offset}")
            rec_id, m, q, d, d_v, d_q, d_u = struct.unpack("<IIIHHHH", header)
            offset += 20
            arrays = []
            for rows, cols in ((m, d), (m, d_v), (q, d_q), (q, d_u)):
                nbytes = 8 * rows * cols
                raw = fh.read(nbytes)
                if len(raw) != nbytes:
                    raise CorruptionError(f"{path}: truncated array at byte {offset}")
                offset += nbytes
                arrays.append(np.frombuffer(raw, dtype="<f8").reshape(rows, cols).copy())
            out.append(OperatorSample(rec_id, *arrays))
    return out


def write_records(path, samples) -> None:
    path = Path(path)
    if path.suffix == ".jsonl":
        write_jsonl(path, samples)
    elif path.suffix == ".bin":
        write_binary(path, samples)
    else:
        raise FormatError(f"unknown record format {path.suffix!r}")


def read_records(path) -> list[OperatorSample]:
    path = Path(path)
    if path.suffix == ".jsonl":
        return read_jsonl(path)
    if path.suffix == ".bin":
        return read_binary(path)
    raise FormatError(f"unknown record format {path.suffix!r}")


# ---------------------------------------------------------------------------
# normalization: affine per channel onto [0, 1], computed on the train split


def _channel_affine(lo: float, hi: float) -> tuple[float, float]:
    if not math.isfinite(lo) or not math.isfinite(hi) or hi <= lo:
        return 0.0, 1.0               # constant channel: identity
    return lo, hi


def normalize_inputs(samples, meta: DatasetMeta) -> None:
    lo, hi = meta.normalization["input"]
    if (lo, hi) == (0.0, 1.0):
        return
    for s in samples:
        s.sensor_values = (s.sensor_values - lo) / (hi - lo)


def normalize_targets(samples, meta: DatasetMeta) -> None:
    lo, hi = meta.normalization["output"]
    if (lo, hi) == (0.0, 1.0):
        return
    for s in samples:
        s.target_values = (s.target_values - lo) / (hi - lo)


def denormalizer(meta: DatasetMeta):
    """Inverse affine for model outputs; None when it is the identity."""
    lo, hi = meta.normalization["output"]
    if (lo, hi) == (0.0, 1.0):
        return None
    return lambda arr: arr * (hi - lo) + lo


# ---------------------------------------------------------------------------
# interpolation of solver grids at query points


def bilinear_periodic(grid: pde.GridField, pts: np.ndarray) -> np.ndarray:
    """Bilinear interpolation with periodic wrap; exact on grid nodes."""
    n0, n1 = grid.resolution
    vals = grid.values
    fx = np.asarray(pts)[:, 0] / grid.period * n0
    fy = np.asarray(pts)[:, 1] / grid.period * n1
    i0 = np.floor(fx).astype(np.int64)
    j0 = np.floor(fy).astype(np.int64)
    tx = fx - i0
    ty = fy - j0
    i0 %= n0
    j0 %= n1
    i1 = (i0 + 1) % n0
    j1 = (j0 + 1) % n1
    return ((1 - tx) * (1 - ty) * vals[i0, j0] + tx * (1 - ty) * vals[i1, j0]
            + (1 - tx) * ty * vals[i0, j1] + tx * ty * vals[i1, j1])


# ---------------------------------------------------------------------------
# per-problem sample synthesis


def global_sensor_index(split: str, index: int, counts: dict) -> int:
    """Distinct layout index per sample across all splits."""
    if split == "train":
        return index
    if split == "val":
        return counts["train"] + index
    return counts["train"] + counts["val"] + index


def _field_rng(seed: int, split: str, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, _SPLIT_TAGS[split], index]))


def _test_grid_queries(cfg: ExperimentConfig) -> np.ndarray:
    (x0, x1), (y0, y1) = domain_for(cfg.problem)
    nx, ny = cfg.data.test_grid
    xs = np.linspace(x0, x1, nx)
    ys = np.linspace(y0, y1, ny)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    return np.column_stack([X.ravel(), Y.ravel()])


def _space_time(coords: np.ndarray, times: np.ndarray) -> np.ndarray:
    rep = np.repeat(coords, times.size, axis=0)
    return np.column_stack([rep, np.tile(times, coords.shape[0])])


def _coeff_list(coeffs: dict) -> list:
    return [[int(k[0]), int(k[1]), float(v)] for k, v in coeffs.items()]


def _coeff_dict(items: list) -> dict:
    return {(int(k1), int(k2)): float(c) for k1, k2, c in items}


def _make_sample(cfg: ExperimentConfig, split: str, index: int):
    """One (sample, field_record) pair; pure in (cfg, split, index)."""
    rng = _field_rng(cfg.seed, split, index)
    counts = {"train": cfg.data.n_train, "val": cfg.data.n_val, "test": cfg.data.n_test}
    gidx = global_sensor_index(split, index, counts)
    coords = sensors.sample_coords(cfg.sensors, gidx, cfg.seed)
    is_test = split == "test"

    if cfg.problem == "allen-cahn":
        w = pde.sample_ac_params(rng)
        values = pde.allen_cahn_eval(w, coords[:, 0], coords[:, 1], 0.0)[:, None]
        if is_test:
            space = _test_grid_queries(cfg)
            times = np.linspace(0.0, cfg.data.t_final, cfg.data.test_n_time)
        else:
            space = coords
            times = np.linspace(0.0, cfg.data.t_final, cfg.data.n_time)
        queries = _space_time(space, times)
        targets = pde.allen_cahn_eval(w, queries[:, 0], queries[:, 1], queries[:, 2])[:, None]
        record = {"id": index, "eps": w.eps, "o_x": w.o_x, "o_y": w.o_y,
                  "c_x": w.c_x, "c_y": w.c_y}
        return OperatorSample(index, coords, values, queries, targets), record

    if cfg.problem == "darcy":
        ds = pde.darcy_sample(rng, resolution=cfg.data.resolution,
                              cutoff=cfg.data.grf_cutoff)
        values = ds.coeff_at(coords)[:, None]
        queries = _test_grid_queries(cfg) if is_test else coords
        targets = bilinear_periodic(ds.u, queries)[:, None]
        record = {"id": index, "coeffs": _coeff_list(ds.log_coeff.coeffs)}
        return OperatorSample(index, coords, values, queries, targets), record

    # navier-stokes
    ns = pde.ns_sample(rng, resolution=cfg.data.resolution, nu=cfg.data.nu,
                       t_final=cfg.data.ns_t_final, cutoff=cfg.data.grf_cutoff)
    values = ns.initial.evaluate(coords)[:, None]
    queries = _test_grid_queries(cfg) if is_test else coords
    targets = bilinear_periodic(ns.omega_final, queries)[:, None]
    record = {"id": index, "coeffs": _coeff_list(ns.initial.coeffs)}
    return OperatorSample(index, coords, values, queries, targets), record


def sensor_values_from_field(problem: str, record: dict, coords: np.ndarray,
                             period: float = 1.0) -> np.ndarray:
    """Exact input-function values at new sensor locations, from a stored field."""
    if problem == "allen-cahn":
        w = pde.AcWaveParams(record["eps"], record["o_x"], record["o_y"],
                             record["c_x"], record["c_y"])
        return pde.allen_cahn_eval(w, coords[:, 0], coords[:, 1], 0.0)[:, None]
    coeffs = _coeff_dict(record["coeffs"])
    g = spectral.eval_coeffs(coeffs, coords, period)
    if problem == "darcy":
        return np.exp(g)[:, None]
    return g[:, None]


# ---------------------------------------------------------------------------
# build


def build_dataset(cfg: ExperimentConfig, out_dir, threads: int = 1,
                  progress=None) -> DatasetMeta:
    """Generate all splits, compute normalization on train, write files.

    Writes <out>/meta.json, <out>/{train,val,test}.<fmt> and
    <out>/fields_test.jsonl (input-field descriptions enabling sensor
    re-sampling at evaluation time).
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    counts = {"train": cfg.data.n_train, "val": cfg.data.n_val, "test": cfg.data.n_test}

    def build_split(split: str):
        jobs = [(split, i) for i in range(counts[split])]
        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                results = list(pool.map(lambda j: _make_sample(cfg, *j), jobs))
        else:
            results = [_make_sample(cfg, *j) for j in jobs]
        if progress:
            progress(f"generated {split}: {len(results)} samples")
        return [r[0] for r in results], [r[1] for r in results]

    splits = {}
    fields = {}
    for split in SPLITS:
        splits[split], fields[split] = build_split(split)

    if cfg.problem == "allen-cahn":
        norm = {"input": [0.0, 1.0], "output": [0.0, 1.0]}   # already in range
    else:
        train = splits["train"]
        in_lo = min(float(s.sensor_values.min()) for s in train)
        in_hi = max(float(s.sensor_values.max()) for s in train)
        out_lo = min(float(s.target_values.min()) for s in train)
        out_hi = max(float(s.target_values.max()) for s in train)
        norm = {"input": list(_channel_affine(in_lo, in_hi)),
                "output": list(_channel_affine(out_lo, out_hi))}

    meta = DatasetMeta(
        problem=cfg.problem,
        sensors={"kind": cfg.sensors.kind, "base_grid": list(cfg.sensors.base_grid),
                 "domain": [list(b) for b in cfg.sensors.domain],
                 "drop_fraction_max": cfg.sensors.drop_fraction_max,
                 "count_variance": cfg.sensors.count_variance},
        counts=counts,
        normalization=norm,
        master_seed=cfg.seed,
        sensor_ranges=sensors.config_ranges(cfg.sensors),
        extras={
            "query_dim": query_dim(cfg.problem),
            "resolution": cfg.data.resolution,
            "grf_cutoff": cfg.data.grf_cutoff,
            "n_time": cfg.data.n_time,
            "t_final": cfg.data.t_final,
            "nu": cfg.data.nu,
            "ns_t_final": cfg.data.ns_t_final,
            "test_grid": list(cfg.data.test_grid),
            "test_n_time": cfg.data.test_n_time,
            "format": cfg.data.format,
        },
    )

    for split in SPLITS:
        lo, hi = meta.sensor_ranges
        for s in splits[split]:
            if not lo <= s.sensor_coords.shape[0] <= hi:
                raise RuntimeError(
                    f"{split} sample {s.id}: sensor count {s.sensor_coords.shape[0]} "
                    f"outside [{lo}, {hi}]")
        write_records(out / f"{split}.{cfg.data.format}", splits[split])
    with open(out / "fields_test.jsonl", "w") as fh:
        for rec in fields["test"]:
            fh.write(json.dumps(rec) + "\n")
    (out / "meta.json").write_text(meta.to_json())
    return meta


def load_meta(data_dir) -> DatasetMeta:
    path = Path(data_dir) / "meta.json"
    if not path.exists():
        raise FileNotFoundError(f"missing dataset metadata {path}")
    return DatasetMeta.from_json(path.read_text())


def load_split(data_dir, split: str, meta: DatasetMeta | None = None) -> list[OperatorSample]:
    if split not in SPLITS:
        raise ValueError(f"unknown split {split!r}")
    if meta is None:
        meta = load_meta(data_dir)
    fmt = meta.extras.get("format", "bin")
    path = Path(data_dir) / f"{split}.{fmt}"
    if not path.exists():
        raise FileNotFoundError(f"missing dataset file {path}")
    return read_records(path)


def load_fields(data_dir) -> list[dict]:
    path = Path(data_dir) / "fields_test.jsonl"
    if not path.exists():
        raise FileNotFoundError(f"missing field sidecar {path}")
    return [json.loads(line) for line in path.read_text().splitlines() if line.strip()]
