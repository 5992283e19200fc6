"""Executable invariant battery behind ``tawsvd verify``.

Each check builds seeded random instances, compares the closed-form claim
against a direct measurement, and returns a :class:`CheckResult`.
"""
from __future__ import annotations

import itertools
import time
from dataclasses import dataclass

import numpy as np

from .baselines import DiagonalScaling, asvd_compress, asvd_predicted_loss, find_asvd_witness
from .compressor import compress_layer, drop_components, measured_loss
from .linalg import svd
from .updater import UpdateContext, closed_form_u, closed_form_u_expanded, design_matrix
from .whitening import WhiteningTransform, orthogonality_defect, whiten_weight, whitening_from_activations

DEFAULT_SIZES = ((2, 3), (6, 8), (8, 5), (32, 64))

THEOREM_TOL = 1e-6
COROLLARY_TOL = 1e-6
UPDATE_TOL = 1e-8
ASVD_TOL = 1e-6
NONWORSE_SLACK = 1e-9


@dataclass
class CheckResult:
    name: str
    passed: bool
    worst: float
    tolerance: float
    detail: str = ""
    seconds: float = 0.0

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        return f"{tag:4}  {self.name:<28} worst={self.worst:.3e}  tol={self.tolerance:.0e}  {self.detail}"


def parse_sizes(text: str) -> tuple:
    sizes = []
    for item in text.split(","):
        m, _, n = item.strip().lower().partition("x")
        sizes.append((int(m), int(n)))
    return tuple(sizes)


def random_instance(rng, m: int, n: int, columns: int | None = None):
    """Random ``m x n`` weight and a full-row-rank ``n x L`` activation with uneven channels."""
    columns = columns or max(4 * n, n + 8)
    w = rng.standard_normal((m, n))
    mix = rng.standard_normal((n, n)) * np.logspace(0, 1, n)[None, :]
    x = mix @ rng.standard_normal((n, columns))
    return w, x


def _whitening(x, whiten: bool) -> WhiteningTransform:
    return whitening_from_activations(x, 0.0) if whiten else WhiteningTransform.identity(x.shape[0])


def theorem_errors(w, x, whiten: bool = True) -> np.ndarray:
    """Relative error between the loss of dropping each singular value and that value."""
    s = _whitening(x, whiten)
    factors = svd(whiten_weight(w, s))
    errs = []
    for i in range(factors.full_rank):
        loss = measured_loss(w, drop_components(factors, [i], s), x)
        errs.append(abs(loss - factors.sigma[i]) / factors.sigma[i])
    return np.array(errs)


def corollary_errors(w, x, whiten: bool = True) -> np.ndarray:
    s = _whitening(x, whiten)
    factors = svd(whiten_weight(w, s))
    k = factors.full_rank
    errs = []
    for m in range(k):
        drop = range(m, k)
        loss = measured_loss(w, drop_components(factors, drop, s), x)
        expected = float(np.sum(factors.sigma[m:] ** 2))
        errs.append(abs(loss ** 2 - expected) / expected)
    return np.array(errs)


def subset_optimality_gap(w, x, whiten: bool = True) -> float:
    """Largest amount (relative) by which some subset beats the tail subset; <= 0 means optimal."""
    s = _whitening(x, whiten)
    factors = svd(whiten_weight(w, s))
    k = factors.full_rank
    worst = -np.inf
    for size in range(1, k + 1):
        tail = measured_loss(w, drop_components(factors, range(k - size, k), s), x)
        best = min(measured_loss(w, drop_components(factors, sub, s), x)
                   for sub in itertools.combinations(range(k), size))
        worst = max(worst, (tail - best) / max(tail, 1e-300))
    return worst


def update_errors(rng, m: int, n: int, rank: int):
    """(lstsq mismatch, expanded-form mismatch, non-worsening excess, stationarity violations)."""
    w, x = random_instance(rng, m, n)
    s = whitening_from_activations(x, 0.0)
    _, plan, factors = compress_layer(w, s, rank)
    x_prime = x + 0.3 * rng.standard_normal(x.shape) * np.std(x)
    v_kept = factors.v[:, :rank]
    d = design_matrix(x_prime, s, v_kept, plan.kept_sigma)
    u_direct = closed_form_u(w, UpdateContext(0, x_prime, d))
    target = w @ x_prime
    u_oracle = np.linalg.lstsq(d.T, target.T, rcond=None)[0].T
    lstsq_err = np.linalg.norm(u_direct - u_oracle) / np.linalg.norm(u_oracle)
    u_exp = closed_form_u_expanded(w, x_prime, s, v_kept, plan.kept_sigma)
    exp_err = np.linalg.norm(u_exp - u_direct) / np.linalg.norm(u_direct)
    before = np.linalg.norm(target - factors.u[:, :rank] @ d)
    after = np.linalg.norm(target - u_direct @ d)
    excess = (after - before) / max(before, 1.0)
    violations = 0
    for _ in range(16):
        direction = rng.standard_normal(u_direct.shape)
        direction *= 1e-3 / np.linalg.norm(direction)
        if np.linalg.norm(target - (u_direct + direction) @ d) <= after:
            violations += 1
    return lstsq_err, exp_err, excess, violations


def fixed_point_error(rng, m: int, n: int, rank: int) -> float:
    """Refit with unchanged input must return the truncated left singular vectors."""
    w, x = random_instance(rng, m, n)
    s = whitening_from_activations(x, 0.0)
    _, plan, factors = compress_layer(w, s, rank)
    d = design_matrix(x, s, factors.v[:, :rank], plan.kept_sigma)
    u_new = closed_form_u(w, UpdateContext(0, x, d))
    u_old = factors.u[:, :rank]
    return float(np.linalg.norm(u_new - u_old) / np.linalg.norm(u_old))


def asvd_formula_error(rng, m: int, n: int, rank: int) -> float:
    w, x = random_instance(rng, m, n)
    scaling = DiagonalScaling.from_activations(x)
    layer, factors = asvd_compress(w, scaling, rank)
    measured = measured_loss(w, layer.dense(), x)
    predicted = asvd_predicted_loss(factors, scaling, x, rank)
    return abs(predicted - measured) / measured


def _timed(fn):
    def wrapper(*args, **kwargs):
        t0 = time.perf_counter()
        res = fn(*args, **kwargs)
        res.seconds = time.perf_counter() - t0
        return res
    wrapper.__name__ = fn.__name__
    return wrapper


@_timed
def check_theorem(seed, sizes, whiten=True, instances=5):
    rng = np.random.default_rng(seed)
    worst = max(float(np.max(theorem_errors(*random_instance(rng, m, n), whiten=whiten)))
                for m, n in sizes for _ in range(instances))
    return CheckResult("single-value loss = sigma", worst < THEOREM_TOL, worst, THEOREM_TOL)


@_timed
def check_corollary(seed, sizes, whiten=True, instances=5):
    rng = np.random.default_rng(seed + 1)
    worst = max(float(np.max(corollary_errors(*random_instance(rng, m, n), whiten=whiten)))
                for m, n in sizes for _ in range(instances))
    return CheckResult("tail loss^2 = sum sigma^2", worst < COROLLARY_TOL, worst, COROLLARY_TOL)


@_timed
def check_subset_optimality(seed, sizes, whiten=True, instances=3):
    rng = np.random.default_rng(seed + 2)
    worst = -np.inf
    for m, n in sizes:
        m, n = min(m, 8), min(n, 8)
        for _ in range(instances):
            worst = max(worst, subset_optimality_gap(*random_instance(rng, m, n), whiten=whiten))
    return CheckResult("tail subset is optimal", worst <= 1e-9, worst, 1e-9,
                       "all C(k, j) subsets enumerated")


@_timed
def check_update(seed, sizes, instances=3):
    rng = np.random.default_rng(seed + 3)
    lst, exp, exc, viol = 0.0, 0.0, -np.inf, 0
    for m, n in sizes:
        rank = max(1, min(m, n) // 2)
        for _ in range(instances):
            a, b, c, v = update_errors(rng, m, n, rank)
            lst, exp, exc, viol = max(lst, a), max(exp, b), max(exc, c), viol + v
    ok = lst < UPDATE_TOL and exp < UPDATE_TOL and exc <= NONWORSE_SLACK and viol == 0
    return CheckResult("closed-form update", ok, max(lst, exp), UPDATE_TOL,
                       f"lstsq={lst:.1e} expanded={exp:.1e} excess={exc:.1e} stationarity_violations={viol}")


@_timed
def check_fixed_point(seed, sizes, instances=3):
    rng = np.random.default_rng(seed + 4)
    worst = max(fixed_point_error(rng, m, n, max(1, min(m, n) // 2)) for m, n in sizes for _ in range(instances))
    return CheckResult("update fixed point", worst < UPDATE_TOL, worst, UPDATE_TOL)


@_timed
def check_asvd_formula(seed, sizes, instances=5):
    rng = np.random.default_rng(seed + 5)
    worst = max(asvd_formula_error(rng, m, n, max(1, min(m, n) // 2)) for m, n in sizes for _ in range(instances))
    return CheckResult("scaled-SVD loss formula", worst < ASVD_TOL, worst, ASVD_TOL)


@_timed
def check_asvd_witness(seed, sizes=None):
    wit = find_asvd_witness(start_seed=seed)
    if wit is None:
        return CheckResult("scaled-SVD non-monotonic", False, float("nan"), 0.0, "no witness found")
    detail = (f"seed={wit.seed} scaled sigma={np.round(wit.asvd_sigma, 3).tolist()} "
              f"drop-one losses={np.round(wit.asvd_losses, 3).tolist()} | whitened losses="
              f"{np.round(wit.whitened_losses, 3).tolist()}")
    return CheckResult("scaled-SVD non-monotonic", True, float(wit.asvd_losses[-1] - np.min(wit.asvd_losses)),
                       0.0, detail)


@_timed
def check_orthogonality(seed, sizes, instances=3):
    """Whitened activations have identity Gram (undamped); reported alongside a damped case."""
    rng = np.random.default_rng(seed + 6)
    worst = 0.0
    for _, n in sizes:
        for _ in range(instances):
            _, x = random_instance(rng, 1, n)
            scale = np.sqrt(np.mean(np.sum(x * x, axis=1)))
            x = x / scale
            worst = max(worst, orthogonality_defect(x, whitening_from_activations(x, 0.0)))
    n = max(n for _, n in sizes)
    low = rng.standard_normal((n, 1)) @ rng.standard_normal((1, 4 * n))
    damped = whitening_from_activations(low, 1e-6)
    detail = (f"rank-1 input: eps={damped.damping_used:.2e} "
              f"defect={orthogonality_defect(low, damped):.2e} (informational)")
    return CheckResult("whitened Gram = I", worst < 1e-8, worst, 1e-8, detail)


def run_all(seed: int = 0, sizes=DEFAULT_SIZES, whiten: bool = True) -> list:
    """Run every check; ``whiten=False`` is the negative control (S = I)."""
    return [
        check_theorem(seed, sizes, whiten=whiten),
        check_corollary(seed, sizes, whiten=whiten),
        check_subset_optimality(seed, sizes, whiten=whiten),
        check_update(seed, sizes),
        check_fixed_point(seed, sizes),
        check_asvd_formula(seed, sizes),
        check_asvd_witness(seed),
        check_orthogonality(seed, sizes),
    ]
