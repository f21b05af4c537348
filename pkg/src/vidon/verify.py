"""Property suites behind the `verify` command: gradient oracles, spectral

rate checks, PDE solver oracles, and the structural invariances of the
set-input architecture. Each check returns its measured value so failures
are diagnosable from the command line.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import model as M
from . import nn
from . import pde
from . import spectral as sp
from . import tensor as T
from . import train as tr
from .model import SensorSet, VidonSpec
from .tensor import GradientTape, Tensor

__all__ = ["CheckResult", "SUITES", "run_suite",
           "suite_autodiff", "suite_spectral", "suite_pde", "suite_invariance",
           "vidon_gradient_check", "permutation_invariance_check",
           "duplication_check", "mean_pooling_check", "mc_fourier_slope",
           "darcy_convergence_ratio", "taylor_green_error",
           "travelling_wave_check"]


@dataclass
class CheckResult:
    name: str
    passed: bool
    measured: str

    def line(self) -> str:
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.name}: {self.measured}"


def _small_spec() -> VidonSpec:
    return VidonSpec(d=2, d_v=1, d_enc=8, n_heads=2, p=4, head_out=3,
                     d_trunk_in=2, encoder_hidden=(6,), head_hidden=(6,),
                     combiner_hidden=(6,), trunk_hidden=(6,))


def vidon_gradient_check(seed: int = 0, m: int = 5, q: int = 4,
                         h: float = 1e-5) -> float:
    """Max relative error of reverse-mode vs central finite differences over
    every parameter of a small set-input network under an MSE loss."""
    rng = np.random.default_rng(seed)
    params = M.init_vidon(_small_spec(), np.random.default_rng(seed + 1))
    s = SensorSet(rng.uniform(0, 1, (m, 2)), rng.standard_normal((m, 1)))
    queries = rng.uniform(0, 1, (q, 2))
    target = rng.standard_normal((q, 1))

    def loss_value() -> float:
        diff = M.predict(params, s, queries) - target
        return float((diff * diff).mean())

    with GradientTape() as tape:
        M.watch_model(tape, params)
        diff = T.sub(M.vidon_forward(params, s, queries), Tensor(target))
        grads = T.backward(T.tmean(T.mul(diff, diff)))

    worst = 0.0
    for _, leaf in params.tensors():
        g = grads[leaf].array
        flat = leaf.array.ravel()
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + h
            up = loss_value()
            flat[j] = orig - h
            down = loss_value()
            flat[j] = orig
            fd = (up - down) / (2 * h)
            worst = max(worst, abs(g.ravel()[j] - fd) / max(abs(g.ravel()[j]), 1e-8))
    return worst


def _composite_ops_check(seed: int = 0, h: float = 1e-5) -> float:
    rng = np.random.default_rng(seed)
    a = rng.uniform(-2, 2, (3, 4))
    z = rng.uniform(-2, 2, 6)

    def build(ts):
        at, zt = ts
        w = T.softmax_scaled(zt, math.sqrt(2.0))
        x = T.tanh(T.matmul(at, T.transpose(at)))
        x = T.mul(x, x)
        y = T.exp(T.scale(T.relu(x), 0.1))
        pooled = T.matmul(T.reshape(w, (1, 6)),
                          T.concat([y, y], axis=0))
        return T.tmean(T.add(pooled, pooled))

    with GradientTape() as tape:
        leaves = [tape.watch(Tensor(v.copy())) for v in (a, z)]
        grads = T.backward(build(leaves))

    worst = 0.0
    for orig_arr, leaf in zip((a, z), leaves):
        g = grads[leaf].array
        for j in range(orig_arr.size):
            bump = [v.copy() for v in (a, z)]
            bump[0 if orig_arr is a else 1].ravel()[j] += h
            up = build([Tensor(v) for v in bump]).item()
            bump[0 if orig_arr is a else 1].ravel()[j] -= 2 * h
            down = build([Tensor(v) for v in bump]).item()
            fd = (up - down) / (2 * h)
            worst = max(worst, abs(g.ravel()[j] - fd) / max(abs(g.ravel()[j]), 1e-8))
    return worst


def suite_autodiff(seed: int = 0) -> list[CheckResult]:
    worst_ops = _composite_ops_check(seed)
    worst_model = vidon_gradient_check(seed)
    return [
        CheckResult("composite op gradients vs finite differences",
                    worst_ops < 1e-5, f"max rel err {worst_ops:.3e} (< 1e-5)"),
        CheckResult("full model gradients vs finite differences",
                    worst_model < 1e-5, f"max rel err {worst_model:.3e} (< 1e-5)"),
    ]


def mc_fourier_slope(ns=(100, 1000, 10_000, 100_000), trials: int = 20,
                     seed: int = 0) -> float:
    """Fitted log-log slope of the Monte-Carlo estimator's L2 error vs N for
    v(x) = sin(x1) + cos(2 x2); the expected rate is -1/2."""
    def v(p):
        return np.sin(p[:, 0]) + np.cos(2 * p[:, 1])

    truth = {m.kappa: 0.0 for m in sp.enumerate_modes(2, 2)}
    truth[(1, 0)] = math.sqrt(2.0) * math.pi
    truth[(0, -2)] = math.sqrt(2.0) * math.pi
    means = []
    for n in ns:
        errs = [sp.coeffs_l2_diff(
            sp.mc_fourier_estimate(v, 2, n, np.random.default_rng(seed + 1000 + 37 * t + n)),
            truth) for t in range(trials)]
        means.append(float(np.mean(errs)))
    return float(np.polyfit(np.log(ns), np.log(means), 1)[0])


def suite_spectral(seed: int = 0) -> list[CheckResult]:
    slope = mc_fourier_slope(seed=seed)
    rng = np.random.default_rng(seed)
    pts = rng.uniform(0, 2 * math.pi, (1_000_000, 2))
    modes = sp.enumerate_modes(2, 2)
    vals = np.stack([sp.basis_eval(m, 2 * math.pi, pts) for m in modes], axis=1)
    gram = vals.T @ vals / pts.shape[0] * (2 * math.pi) ** 2
    gram_err = float(np.abs(gram - np.eye(25)).max())
    return [
        CheckResult("Monte-Carlo Fourier rate (slope vs N)",
                    -0.6 <= slope <= -0.4, f"slope {slope:.3f} (in [-0.6, -0.4])"),
        CheckResult("basis orthonormality (25 modes, 1e6-point quadrature)",
                    gram_err < 5e-3, f"max Gram deviation {gram_err:.2e} (< 5e-3)"),
    ]


def darcy_convergence_ratio() -> tuple[float, float]:
    """(error ratio between 64^2 and 128^2 grids, exit residual at 128^2)."""
    errs = {}
    residual = math.inf
    for n in (64, 128):
        g = pde.GridField(np.zeros((n, n)), 1.0)
        x, y = g.nodes()
        tp = 2 * math.pi
        u_star = np.sin(tp * x) * np.cos(tp * y)
        a = 1.0 + 0.5 * np.sin(tp * x) * np.sin(tp * y)
        a_x = math.pi * np.cos(tp * x) * np.sin(tp * y)
        a_y = math.pi * np.sin(tp * x) * np.cos(tp * y)
        u_x = tp * np.cos(tp * x) * np.cos(tp * y)
        u_y = -tp * np.sin(tp * x) * np.sin(tp * y)
        f = 8 * math.pi ** 2 * a * u_star - a_x * u_x - a_y * u_y
        u = pde.darcy_solve(pde.GridField(a, 1.0), pde.GridField(f, 1.0))
        diff = u.values - (u_star - u_star.mean())
        errs[n] = math.sqrt(float((diff ** 2).mean()))
        res = pde.darcy_apply(a, u.values, 1.0 / n) - f
        res -= res.mean()
        residual = float(np.linalg.norm(res) / np.linalg.norm(f))
    return errs[64] / errs[128], residual


def taylor_green_error(n: int = 64, nu: float = 1e-3, t_final: float = 1.0) -> float:
    g = pde.GridField(np.zeros((n, n)), 1.0)
    x, y = g.nodes()
    amp = -2.0 * (2 * math.pi) ** 2
    omega0 = pde.GridField(amp * np.sin(2 * math.pi * x) * np.sin(2 * math.pi * y), 1.0)
    final, _ = pde.ns_integrate(omega0, nu, t_final, n_checks=2)
    exact = omega0.values * math.exp(-8 * math.pi ** 2 * nu * t_final)
    return float(np.abs(final.values - exact).max() / np.abs(exact).max())


def travelling_wave_check(n_draws: int = 1000, seed: int = 0) -> tuple[float, bool]:
    """(worst identity violation, all values inside (0, 1))."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    in_range = True
    for _ in range(n_draws):
        w = pde.sample_ac_params(rng)
        x, y = rng.uniform(0, 2, 2)
        t = rng.uniform(0, 0.05)
        u = pde.allen_cahn_eval(w, x, y, t)
        shifted = pde.allen_cahn_eval(w, x - pde.AC_WAVE_SPEED * t * w.c_x,
                                      y - pde.AC_WAVE_SPEED * t * w.c_y, 0.0)
        worst = max(worst, abs(float(u) - float(shifted)))
        in_range &= 0.0 < float(u) < 1.0
    return worst, in_range


def suite_pde() -> list[CheckResult]:
    ratio, residual = darcy_convergence_ratio()
    tg = taylor_green_error()
    wave_err, in_range = travelling_wave_check()
    return [
        CheckResult("Darcy manufactured-solution convergence (64^2 -> 128^2)",
                    3.2 <= ratio <= 4.8, f"error ratio {ratio:.3f} (in [3.2, 4.8])"),
        CheckResult("Darcy CG exit residual", residual < 1e-10,
                    f"relative residual {residual:.2e} (< 1e-10)"),
        CheckResult("Taylor-Green viscous decay", tg < 1e-3,
                    f"relative error {tg:.2e} (< 1e-3)"),
        CheckResult("travelling-wave shift identity (1000 draws)",
                    wave_err < 1e-12 and in_range,
                    f"max deviation {wave_err:.2e} (< 1e-12), in range: {in_range}"),
    ]


def permutation_invariance_check(n_instances: int = 50, n_perms: int = 20,
                                 sizes=(1, 2, 17, 256), seed: int = 0) -> int:
    """Number of bit-level mismatches of branch output under row permutations."""
    mismatches = 0
    for k in range(n_instances):
        params = M.init_vidon(_small_spec(), np.random.default_rng(seed + k))
        rng = np.random.default_rng(seed + 10_000 + k)
        for m in sizes:
            s = SensorSet(rng.uniform(0, 1, (m, 2)), rng.standard_normal((m, 1)))
            ref = M.branch(params, s).array.tobytes()
            for _ in range(n_perms):
                perm = rng.permutation(m)
                got = M.branch(params, SensorSet(s.coords[perm], s.values[perm]))
                mismatches += got.array.tobytes() != ref
    return mismatches


def duplication_check(seed: int = 0, reps: int = 2) -> float:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for k in range(20):
        params = M.init_vidon(_small_spec(), np.random.default_rng(seed + 500 + k))
        m = int(rng.integers(1, 40))
        s = SensorSet(rng.uniform(0, 1, (m, 2)), rng.standard_normal((m, 1)))
        base = M.branch(params, s).array
        dup = SensorSet(np.tile(s.coords, (reps, 1)), np.tile(s.values, (reps, 1)))
        got = M.branch(params, dup).array
        worst = max(worst, float(
            (np.abs(got - base) / np.maximum(np.abs(base), 1e-12)).max()))
    return worst


def mean_pooling_check(seed: int = 0) -> float:
    """Worst deviation of a zero-logit head from the arithmetic feature mean."""
    worst = 0.0
    rng = np.random.default_rng(seed)
    for k in range(20):
        params = M.init_vidon(_small_spec(), np.random.default_rng(seed + 900 + k))
        for om in params.omega:
            om.layers = [(Tensor(np.zeros_like(w.array)), Tensor(np.zeros_like(b.array)))
                         for w, b in om.layers]
        m = int(rng.integers(1, 60))
        s = SensorSet(rng.uniform(0, 1, (m, 2)), rng.standard_normal((m, 1)))
        psi = M.encode_sensors(params, s)
        for ell in range(1, params.spec.n_heads + 1):
            head = M.head_output(params, ell, psi).array
            ref = nn.forward(params.nu[ell - 1], psi).array.mean(axis=0)
            worst = max(worst, float(np.abs(head - ref).max()))
    return worst


def _weight_sum_check(seed: int = 0) -> float:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(50):
        z = rng.uniform(-30, 30, int(rng.integers(1, 300)))
        w = T.softmax_scaled(Tensor(z), math.sqrt(8.0)).array
        worst = max(worst, abs(float(w.sum()) - 1.0))
        if w.min() <= 0 or w.max() > 1:
            worst = math.inf
    return worst


def suite_invariance(seed: int = 0, full: bool = False) -> list[CheckResult]:
    mism = permutation_invariance_check(
        n_instances=50 if full else 10, n_perms=20 if full else 5, seed=seed)
    dup = duplication_check(seed)
    pool = mean_pooling_check(seed)
    wsum = _weight_sum_check(seed)
    return [
        CheckResult("permutation invariance (bitwise)", mism == 0,
                    f"{mism} mismatches (must be 0)"),
        CheckResult("sensor duplication invariance", dup < 1e-12,
                    f"max rel change {dup:.2e} (< 1e-12)"),
        CheckResult("zero-logit heads reduce to mean pooling", pool < 1e-13,
                    f"max deviation {pool:.2e} (< 1e-13)"),
        CheckResult("head weights sum to one", wsum < 1e-14,
                    f"max |sum - 1| {wsum:.2e} (< 1e-14)"),
    ]


SUITES = {
    "autodiff": suite_autodiff,
    "spectral": suite_spectral,
    "pde": suite_pde,
    "invariance": suite_invariance,
}


def run_suite(name: str, seed: int = 0) -> list[CheckResult]:
    if name == "all":
        out = []
        for key in SUITES:
            out.extend(run_suite(key, seed))
        return out
    if name not in SUITES:
        raise ValueError(f"unknown suite {name!r}; choose from {list(SUITES) + ['all']}")
    fn = SUITES[name]
    return fn() if name == "pde" else fn(seed)
