"""Variable-input operator network and the fixed-sensor branch/trunk baseline.

The variable-input network consumes a set of (coordinate, value) sensor
readings of arbitrary size m. Each reading is encoded as
psi_j = coord_encoder(x_j) + value_encoder(u(x_j)); every head turns the
encodings into softmax weights (logits scaled by sqrt(d_enc)) and returns
the weighted sum of its value network's outputs; heads are concatenated and
combined into p branch coefficients, which weight the trunk net's basis
evaluated at query points.

Sensor rows are sorted by a canonical byte key before any reduction, which
makes permutation invariance exact in floating point, not just within
tolerance.

The fixed-sensor baseline is recovered from the set architecture only as a
softmax limit: one-hot selection weights require logits diverging to
infinity, so no finite parameterization reproduces it exactly. The exact
finite reductions are the degenerate cases tested here: a single sensor
(softmax of one logit is 1) and zero logits (uniform weights, mean pooling).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import nn
from . import tensor as T
from .nn import MlpParams, MlpSpec
from .tensor import DimensionError, GradientTape, Tensor

__all__ = [
    "SensorSet",
    "VidonSpec",
    "VidonParams",
    "DeeponetSpec",
    "DeeponetParams",
    "init_vidon",
    "init_deeponet",
    "encode_sensors",
    "head_output",
    "branch",
    "branch_batch",
    "vidon_forward",
    "trunk_forward",
    "predict",
    "predict_batch",
    "deeponet_forward",
    "deeponet_predict_batch",
    "count_model_params",
    "watch_model",
]


@dataclass
class SensorSet:
    """Unordered set of m sensor readings: coords (m, d), values (m, d_v)."""

    coords: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.coords = np.ascontiguousarray(self.coords, dtype=np.float64)
        self.values = np.ascontiguousarray(self.values, dtype=np.float64)
        if self.coords.ndim != 2 or self.values.ndim != 2:
            raise DimensionError("sensor coords and values must be 2-d arrays")
        if self.coords.shape[0] != self.values.shape[0] or self.coords.shape[0] < 1:
            raise DimensionError(
                f"inconsistent sensor counts: {self.coords.shape} vs {self.values.shape}"
            )

    @property
    def m(self) -> int:
        return self.coords.shape[0]

    def canonical(self) -> "SensorSet":
        """Rows sorted by raw bytes of (coords, values); a permutation-free key."""
        rows = np.hstack([self.coords, self.values])
        key = np.ascontiguousarray(rows).view(
            np.dtype((np.void, rows.shape[1] * rows.itemsize))
        ).ravel()
        order = np.argsort(key, kind="stable")
        return SensorSet(self.coords[order], self.values[order])


@dataclass(frozen=True)
class VidonSpec:
    """Hyperparameters of one variable-input network instance."""

    d: int = 2
    d_v: int = 1
    d_enc: int = 32
    n_heads: int = 2
    p: int = 50
    head_out: int = 16
    d_trunk_in: int = 2
    encoder_hidden: tuple[int, ...] = ()
    head_hidden: tuple[int, ...] = (64, 64)
    combiner_hidden: tuple[int, ...] = (64,)
    trunk_hidden: tuple[int, ...] = (64, 64)
    activation: str = "tanh"
    trunk_activation: str = "tanh"
    # fixed per-feature scaling of query coordinates before the trunk MLP;
    # balances gradient magnitudes when coordinate ranges differ wildly
    # (time spans 0.05 while space spans 2)
    trunk_in_scale: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.n_heads < 1 or self.p < 1:
            raise ValueError("need at least one head and one branch/trunk pair")
        if self.trunk_in_scale is not None and len(self.trunk_in_scale) != self.d_trunk_in:
            raise ValueError("trunk_in_scale length must equal d_trunk_in")

    def coord_encoder_spec(self) -> MlpSpec:
        return MlpSpec(self.d, self.encoder_hidden, self.d_enc, self.activation)

    def value_encoder_spec(self) -> MlpSpec:
        return MlpSpec(self.d_v, self.encoder_hidden, self.d_enc, self.activation)

    def weight_net_spec(self) -> MlpSpec:
        return MlpSpec(self.d_enc, self.head_hidden, 1, self.activation)

    def value_net_spec(self) -> MlpSpec:
        return MlpSpec(self.d_enc, self.head_hidden, self.head_out, self.activation)

    def combiner_spec(self) -> MlpSpec:
        return MlpSpec(self.n_heads * self.head_out, self.combiner_hidden, self.p, self.activation)

    def trunk_spec(self) -> MlpSpec:
        return MlpSpec(self.d_trunk_in, self.trunk_hidden, self.p + 1, self.trunk_activation)


@dataclass
class VidonParams:
    spec: VidonSpec
    psi_c: MlpParams
    psi_v: MlpParams
    omega: list[MlpParams]
    nu: list[MlpParams]
    phi: MlpParams
    tau: MlpParams

    def tensors(self):
        yield from self.psi_c.tensors("psi_c")
        yield from self.psi_v.tensors("psi_v")
        for i, m in enumerate(self.omega):
            yield from m.tensors(f"omega{i}")
        for i, m in enumerate(self.nu):
            yield from m.tensors(f"nu{i}")
        yield from self.phi.tensors("phi")
        yield from self.tau.tensors("tau")


def init_vidon(spec: VidonSpec, rng: np.random.Generator) -> VidonParams:
    return VidonParams(
        spec=spec,
        psi_c=nn.init_mlp(spec.coord_encoder_spec(), rng),
        psi_v=nn.init_mlp(spec.value_encoder_spec(), rng),
        omega=[nn.init_mlp(spec.weight_net_spec(), rng) for _ in range(spec.n_heads)],
        nu=[nn.init_mlp(spec.value_net_spec(), rng) for _ in range(spec.n_heads)],
        phi=nn.init_mlp(spec.combiner_spec(), rng),
        tau=nn.init_mlp(spec.trunk_spec(), rng),
    )


def encode_sensors(params: VidonParams, s: SensorSet) -> Tensor:
    """Row-wise encodings psi_j in the order the SensorSet rows are given."""
    if s.coords.shape[1] != params.spec.d or s.values.shape[1] != params.spec.d_v:
        raise DimensionError(
            f"sensor dims {s.coords.shape[1]}/{s.values.shape[1]} do not match "
            f"spec ({params.spec.d}/{params.spec.d_v})"
        )
    pc = nn.forward(params.psi_c, Tensor(s.coords))
    pv = nn.forward(params.psi_v, Tensor(s.values))
    return T.add(pc, pv)


def head_output(params: VidonParams, ell: int, psi: Tensor) -> Tensor:
    """Output of head ell (1-based): softmax-weighted sum of value features."""
    spec = params.spec
    if not 1 <= ell <= spec.n_heads:
        raise ValueError(f"head index {ell} outside 1..{spec.n_heads}")
    logits = nn.forward(params.omega[ell - 1], psi)
    w = T.softmax_scaled(T.reshape(logits, (psi.shape[0],)), math.sqrt(spec.d_enc))
    vals = nn.forward(params.nu[ell - 1], psi)
    pooled = T.matmul(T.reshape(w, (1, psi.shape[0])), vals)
    return T.reshape(pooled, (spec.head_out,))


def branch(params: VidonParams, s: SensorSet) -> Tensor:
    """Branch coefficients for one sensor set, permutation-invariant bitwise."""
    s = s.canonical()
    psi = encode_sensors(params, s)
    heads = [
        T.reshape(head_output(params, ell, psi), (1, params.spec.head_out))
        for ell in range(1, params.spec.n_heads + 1)
    ]
    cat = heads[0] if len(heads) == 1 else T.concat(heads, axis=1)
    out = nn.forward(params.phi, cat)
    return T.reshape(out, (params.spec.p,))


def _concat_canonical(sets: list[SensorSet]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    ordered = [s.canonical() for s in sets]
    coords = np.concatenate([s.coords for s in ordered], axis=0)
    values = np.concatenate([s.values for s in ordered], axis=0)
    bounds = np.cumsum([0] + [s.m for s in ordered])
    return coords, values, bounds


def branch_batch(params: VidonParams, sets: list[SensorSet]) -> Tensor:
    """Branch coefficients for a ragged batch of sensor sets, shape (B, p).

    All per-sensor networks run on the concatenated rows; softmax and the
    weighted sums are segmented per sample, so the result matches the
    single-sample path up to rounding.
    """
    return branch_batch_arrays(params, *_concat_canonical(sets))


def branch_batch_arrays(params: VidonParams, coords: np.ndarray,
                        values: np.ndarray, bounds: np.ndarray) -> Tensor:
    """branch_batch on pre-concatenated canonical rows (hot training path)."""
    spec = params.spec
    psi = T.add(
        nn.forward(params.psi_c, Tensor(coords)),
        nn.forward(params.psi_v, Tensor(values)),
    )
    scale_const = math.sqrt(spec.d_enc)
    heads = []
    for ell in range(spec.n_heads):
        logits = nn.forward(params.omega[ell], psi)
        w = T.segment_softmax_scaled(logits, bounds, scale_const)
        vals = nn.forward(params.nu[ell], psi)
        heads.append(T.segment_sum(T.mul(vals, w), bounds))
    cat = heads[0] if len(heads) == 1 else T.concat(heads, axis=1)
    return nn.forward(params.phi, cat)


def trunk_forward(params, queries) -> Tensor:
    """Trunk evaluation with the spec's fixed query scaling applied."""
    q = queries.array if isinstance(queries, Tensor) else np.asarray(queries, dtype=np.float64)
    scale = getattr(params.spec, "trunk_in_scale", None)
    if scale is not None:
        q = q * np.asarray(scale)
    return nn.forward(params.tau, Tensor(q))


def _combine(params, branch_out: Tensor, queries: Tensor) -> Tensor:
    p = params.spec.p
    trunk = trunk_forward(params, queries)
    tau0 = T.slice_cols(trunk, 0, 1)
    basis = T.slice_cols(trunk, 1, p + 1)
    beta = T.reshape(branch_out, (p, 1))
    return T.add(tau0, T.matmul(basis, beta))


def _check_queries(params, queries) -> Tensor:
    q = queries if isinstance(queries, Tensor) else Tensor(queries)
    if q.array.ndim != 2 or q.shape[1] != params.spec.d_trunk_in:
        raise DimensionError(
            f"query shape {q.shape} does not match trunk input dim {params.spec.d_trunk_in}"
        )
    return q


def vidon_forward(params: VidonParams, s: SensorSet, queries) -> Tensor:
    """Predicted output at each query row: tau_0(y) + sum_k beta_k tau_k(y)."""
    q = _check_queries(params, queries)
    return _combine(params, branch(params, s), q)


def predict(params: VidonParams, s: SensorSet, queries) -> np.ndarray:
    """Untraced convenience wrapper around vidon_forward."""
    return vidon_forward(params, s, queries).array


def predict_batch(params: VidonParams, sets: list[SensorSet], queries_list) -> list[np.ndarray]:
    """Untraced predictions for many samples; queries_list is one array per sample."""
    beta_all = branch_batch(params, sets).array
    first = np.asarray(queries_list[0])
    shared = all(
        np.asarray(q).shape == first.shape and np.array_equal(q, first)
        for q in queries_list[1:]
    )
    if shared:
        trunk = trunk_forward(params, _check_queries(params, first)).array
        combined = trunk[:, 1:] @ beta_all.T + trunk[:, :1]     # (q, B)
        return [combined[:, i:i + 1].copy() for i in range(len(sets))]
    out = []
    for i, queries in enumerate(queries_list):
        q = _check_queries(params, queries)
        trunk = trunk_forward(params, q).array
        out.append(trunk[:, :1] + trunk[:, 1:] @ beta_all[i][:, None])
    return out


@dataclass(frozen=True)
class DeeponetSpec:
    """Fixed-sensor baseline: branch eats all m_fixed * d_v values as one vector."""

    m_fixed: int
    d_v: int = 1
    p: int = 50
    d_trunk_in: int = 2
    branch_hidden: tuple[int, ...] = (64, 64)
    trunk_hidden: tuple[int, ...] = (64, 64)
    activation: str = "tanh"
    trunk_activation: str = "tanh"
    trunk_in_scale: tuple[float, ...] | None = None

    def branch_spec(self) -> MlpSpec:
        return MlpSpec(self.m_fixed * self.d_v, self.branch_hidden, self.p, self.activation)

    def trunk_spec(self) -> MlpSpec:
        return MlpSpec(self.d_trunk_in, self.trunk_hidden, self.p + 1, self.trunk_activation)


@dataclass
class DeeponetParams:
    spec: DeeponetSpec
    branch_net: MlpParams
    tau: MlpParams

    def tensors(self):
        yield from self.branch_net.tensors("branch")
        yield from self.tau.tensors("tau")


def init_deeponet(spec: DeeponetSpec, rng: np.random.Generator) -> DeeponetParams:
    return DeeponetParams(
        spec=spec,
        branch_net=nn.init_mlp(spec.branch_spec(), rng),
        tau=nn.init_mlp(spec.trunk_spec(), rng),
    )


def deeponet_forward(params: DeeponetParams, values, queries) -> Tensor:
    """Baseline forward; values must hold exactly m_fixed * d_v sensor readings."""
    v = values if isinstance(values, Tensor) else Tensor(values)
    n = params.spec.m_fixed * params.spec.d_v
    if v.size != n:
        raise DimensionError(f"expected {n} sensor values, got {v.size}")
    q = queries if isinstance(queries, Tensor) else Tensor(queries)
    if q.array.ndim != 2 or q.shape[1] != params.spec.d_trunk_in:
        raise DimensionError(f"query shape {q.shape} incompatible with trunk")
    beta = nn.forward(params.branch_net, T.reshape(v, (1, n)))
    return _combine(params, T.reshape(beta, (params.spec.p,)), q)


def deeponet_predict_batch(params: DeeponetParams, values_matrix: np.ndarray,
                           queries_list) -> list[np.ndarray]:
    """Untraced baseline predictions; values_matrix rows are flattened sensor values."""
    beta_all = nn.forward(params.branch_net, Tensor(values_matrix)).array
    out = []
    for i, queries in enumerate(queries_list):
        trunk = trunk_forward(params, np.asarray(queries, dtype=np.float64)).array
        out.append(trunk[:, :1] + trunk[:, 1:] @ beta_all[i][:, None])
    return out


def count_model_params(params) -> int:
    """Total trainable parameter count; independent of any sensor set size."""
    if isinstance(params, VidonParams):
        nets = [params.psi_c, params.psi_v, *params.omega, *params.nu, params.phi, params.tau]
    elif isinstance(params, DeeponetParams):
        nets = [params.branch_net, params.tau]
    else:
        raise TypeError(f"unsupported params type {type(params)!r}")
    return sum(nn.count_params(net) for net in nets)


def watch_model(tape: GradientTape, params) -> None:
    for _, t in params.tensors():
        tape.watch(t)
