"""Independent numerical certification of constructed forms and claims.

Every check reports a normalized residual with the sample where it was
attained; nothing is trusted from the construction path it certifies.  The
horizontal-constancy, homogeneity and Hessian checks consume exact jets of
the form; the Levi-Civita round trip rebuilds Christoffel coefficients from
metric derivatives; geodesic agreement runs two independent integrations;
the quadratic-fit falsification searches for *any* metric compatible with
the bracket constraints and reports the least-squares floor.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field
from typing import Optional, Sequence

import numpy as np

from .geodesic_engine import integrate_finsler, integrate_spray
from .geometry_core import (ConnectionProfile, TangentPoint, bracket_matrix,
                            curvature_profile, nonlinear_connection)
from .metrizer import RiemannForm
from .multijet import VERTICAL
from .scalar_field import DomainError


class VerificationError(RuntimeError):
    pass


class Degenerate(VerificationError):
    def __init__(self, sample, det):
        self.sample = sample
        self.det = det
        super().__init__("degenerate Hessian (det = %.3g) at %s" % (det, sample))


@dataclass
class CheckResult:
    name: str
    residual: float
    tolerance: float
    passed: bool
    sample: Optional[tuple] = None
    extra: dict = dc_field(default_factory=dict)

    def to_dict(self) -> dict:
        d = {"name": self.name, "residual": self.residual,
             "tolerance": self.tolerance, "passed": self.passed}
        if self.sample is not None:
            d["sample"] = list(self.sample)
        if self.extra:
            d["extra"] = {k: v for k, v in self.extra.items()
                          if isinstance(v, (int, float, str, list, tuple, bool))}
        return d


@dataclass
class ResidualReport:
    checks: list = dc_field(default_factory=list)
    seed: Optional[int] = None

    def add(self, result: CheckResult) -> CheckResult:
        if any(c.name == result.name for c in self.checks):
            raise ValueError("duplicate check name %r in one run" % result.name)
        self.checks.append(result)
        return result

    def all_passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def failed(self) -> list:
        return [c for c in self.checks if not c.passed]

    def to_dict(self) -> dict:
        return {"seed": self.seed, "passed": self.all_passed(),
                "checks": [c.to_dict() for c in self.checks]}


def _sample_key(p: TangentPoint) -> tuple:
    return tuple(p.state())


# ---------------------------------------------------------------------------
# Pointwise checks on an L evaluator
# ---------------------------------------------------------------------------

def check_horizontal_constancy(evaluator, conn: ConnectionProfile,
                               samples: Sequence[TangentPoint],
                               tol: float = 1e-7, name: str = "horizontal-constancy"
                               ) -> CheckResult:
    """max_a |delta_a L| / (1 + |L|) over admissible samples."""
    worst = 0.0
    where = None
    used = 0
    skipped = 0
    for p in samples:
        if not evaluator.admissible(p):
            skipped += 1
            continue
        try:
            jet = evaluator.jet(p)
        except DomainError:
            skipped += 1
            continue
        used += 1
        N = nonlinear_connection(conn, p)
        dv = jet.vertical_gradient()
        dh = jet.horizontal_gradient()
        denom = 1.0 + abs(jet.value)
        for a in range(4):
            res = abs(dh[a] - N[:, a] @ dv) / denom
            if res > worst:
                worst, where = res, _sample_key(p)
    if used == 0:
        raise VerificationError("no admissible samples for horizontal constancy")
    return CheckResult(name, worst, tol, worst < tol, where,
                       {"samples_used": used, "samples_skipped": skipped})


def check_homogeneity(evaluator, samples: Sequence[TangentPoint],
                      tol: float = 1e-10, name: str = "euler-homogeneity") -> CheckResult:
    """C(L) = 2L: Euler vector field applied through exact vertical gradients."""
    worst = 0.0
    where = None
    used = 0
    for p in samples:
        if not evaluator.admissible(p):
            continue
        try:
            jet = evaluator.jet(p)
        except DomainError:
            continue
        used += 1
        cl = p.velocity @ jet.vertical_gradient()
        res = abs(cl - 2.0 * jet.value) / (1.0 + abs(jet.value))
        if res > worst:
            worst, where = res, _sample_key(p)
    if used == 0:
        raise VerificationError("no admissible samples for homogeneity")
    return CheckResult(name, worst, tol, worst < tol, where, {"samples_used": used})


def check_hessian(evaluator, samples: Sequence[TangentPoint], det_floor: float = 1e-10,
                  name: str = "hessian-nondegeneracy") -> CheckResult:
    """g_ab = (1/2) ddot_a ddot_b L nonsingular; eigenvalue sign pattern observed."""
    min_det = math.inf
    where = None
    signatures = set()
    used = 0
    for p in samples:
        if not evaluator.admissible(p):
            continue
        try:
            g = evaluator.jet(p).metric_tensor()
        except DomainError:
            continue
        used += 1
        det = float(np.linalg.det(g))
        eig = np.linalg.eigvalsh(g)
        signatures.add((int(np.sum(eig > 0)), int(np.sum(eig < 0))))
        if abs(det) < min_det:
            min_det, where = abs(det), _sample_key(p)
    if used == 0:
        raise VerificationError("no admissible samples for the Hessian check")
    passed = min_det > det_floor and len(signatures) == 1
    sig = sorted(signatures)
    return CheckResult(name, min_det, det_floor, passed, where,
                       {"signatures": [list(s) for s in sig], "samples_used": used,
                        "comparison": "residual is min |det g|, must exceed tolerance"})


def signature_observation(evaluator, samples: Sequence[TangentPoint]) -> tuple:
    """(n_positive, n_negative) eigenvalue counts, if consistent across samples."""
    res = check_hessian(evaluator, samples)
    sigs = res.extra["signatures"]
    if not res.passed or len(sigs) != 1:
        raise Degenerate(res.sample, res.residual)
    return tuple(sigs[0])


def levi_civita_roundtrip(A: RiemannForm, conn: ConnectionProfile,
                          grid: Sequence[tuple], tol: float = 1e-6,
                          name: str = "levi-civita-roundtrip") -> CheckResult:
    """Christoffels rebuilt from A's coefficient jets vs the input k-table."""
    worst = 0.0
    where = None
    for (t, r) in grid:
        k_round = A.christoffels(t, r)
        k_in = conn.k_values(t, r)
        denom = 1.0 + float(np.max(np.abs(k_in)))
        res = float(np.max(np.abs(k_round - k_in))) / denom
        if res > worst:
            worst, where = res, (t, r)
    return CheckResult(name, worst, tol, worst < tol, where)


def geodesic_agreement(evaluator, conn: ConnectionProfile, p0: TangentPoint, T: float,
                       n_out: int = 100, disc_tol: float = 1e-6,
                       drift_tol: float = 1e-8, name: str = "geodesic-agreement"
                       ) -> CheckResult:
    """Affine autoparallel vs Finsler Euler-Lagrange trajectory, plus the
    conservation of L along the autoparallel."""
    tr_a = integrate_spray(conn, p0, T, n_out)
    tr_f = integrate_finsler(evaluator, p0, T, n_out)
    scale = 1.0 + float(np.max(np.abs(tr_a.states)))
    disc = float(np.max(np.abs(tr_a.states - tr_f.states))) / scale
    Ls = np.array([evaluator.jet(TangentPoint(*st)).value for st in tr_a.states])
    drift = float(np.max(np.abs(Ls - Ls[0]))) / (1.0 + abs(Ls[0]))
    passed = disc < disc_tol and drift < drift_tol
    return CheckResult(name, max(disc, drift), max(disc_tol, drift_tol), passed,
                       tuple(p0.state()),
                       {"trajectory_discrepancy": disc, "L_drift": drift,
                        "steps_affine": tr_a.steps, "steps_finsler": tr_f.steps})


def berwald_check(evaluator, samples: Sequence[TangentPoint], tol: float = 1e-5,
                  h: float = 0.05, name: str = "berwald-quadratic-spray") -> CheckResult:
    """Third vertical derivative of the spray of L (finite differences of the
    jet-exact spray) must vanish: quadratic G^a characterizes Berwald."""
    from .geodesic_engine import finsler_spray

    worst = 0.0
    where = None
    used = 0
    for p in samples:
        base = p.state()
        for b in range(4):
            try:
                vals = []
                for m in (-2, -1, 1, 2):
                    st = base.copy()
                    st[4 + b] += m * h
                    q = TangentPoint(*st)
                    if not evaluator.admissible(q):
                        raise DomainError("shifted sample outside the conic domain")
                    vals.append(finsler_spray(evaluator, q))
                third = (vals[3] - 2.0 * vals[2] + 2.0 * vals[1] - vals[0]) / (2.0 * h ** 3)
            except (DomainError, np.linalg.LinAlgError):
                continue
            used += 1
            scale = 1.0 + max(float(np.max(np.abs(v))) for v in vals)
            res = float(np.max(np.abs(third))) / scale
            if res > worst:
                worst, where = res, _sample_key(p)
    if used == 0:
        raise VerificationError("no admissible stencils for the Berwald check")
    return CheckResult(name, worst, tol, worst < tol, where, {"stencils_used": used})


# ---------------------------------------------------------------------------
# Quadratic-fit falsification
# ---------------------------------------------------------------------------

_SYM10 = [(i, j) for i in range(4) for j in range(i, 4)]


def _bracket_coefficient_tensors(conn: ConnectionProfile, t: float, r: float,
                                 theta: float) -> list:
    """The depth-1/2 bracket vectors are linear in the velocity; extract their
    coefficient tensors T[c, d] by evaluating at the four basis velocities."""
    cp = curvature_profile(conn, t, r)
    per_basis = []
    for c in range(4):
        v = np.zeros(4)
        v[c] = 1.0
        p = TangentPoint(t, r, theta, 0.0, *v)
        per_basis.append(bracket_matrix(conn, p, 2, cp))
    tensors = []
    for k in range(per_basis[0].shape[0]):
        T = np.stack([per_basis[c][k] for c in range(4)])  # T[c, d]
        if float(np.max(np.abs(T))) > 1e-13:
            tensors.append(T)
    return tensors


def _annihilation_rows(T: np.ndarray) -> list:
    """Rows of A -> (T o A) + (T o A)^T over the ten symmetric unknowns.

    A parallel metric is annihilated by the curvature endomorphism and by its
    horizontal derivatives; both appear among the bracket coefficient tensors
    (their Gamma-correction terms are curvature recombinations, annihilating A
    as well), so M_ce = T[c, d] A_de + T[e, d] A_dc must vanish.
    """
    rows = []
    for c in range(4):
        for e in range(c, 4):
            row = np.zeros(10)
            for col, (i, j) in enumerate(_SYM10):
                val = 0.0
                for d in range(4):
                    if (min(d, e), max(d, e)) == (i, j):
                        val += T[c, d]
                    if (min(d, c), max(d, c)) == (i, j):
                        val += T[e, d]
                row[col] = val
            rows.append(row)
    return rows


def _sym_matrix(x: np.ndarray) -> np.ndarray:
    A = np.zeros((4, 4))
    for col, (i, j) in enumerate(_SYM10):
        A[i, j] = A[j, i] = x[col]
    return A


def riemann_falsification(conn: ConnectionProfile, t: float, r: float, theta: float,
                          rng: np.random.Generator, n_velocities: int = 40,
                          floor: float = 1e-3, det_tol: float = 1e-6,
                          name: str = "quadratic-fit-floor") -> CheckResult:
    """Least-squares evidence that no nondegenerate quadratic form survives the
    pointwise integrability constraints.

    A parallel metric A must be annihilated by the curvature endomorphism and
    its first horizontal derivatives: stacking (T o A) + (T o A)^T = 0 over all
    bracket coefficient tensors gives a linear system in the ten components of
    A.  Falsification is established when either the system has no kernel at
    all (fit floor above the threshold), or every kernel member is degenerate
    as a quadratic form and any nondegenerate candidate pays a least-squares
    residual above the threshold.  Metrizable connections put the true metric
    itself in the kernel and drive the reported residual to zero.

    ``passed`` is True when falsification is established; ``n_velocities`` is
    kept for interface stability (the tensor extraction has replaced velocity
    sampling).
    """
    tensors = _bracket_coefficient_tensors(conn, t, r, theta)
    rows = []
    for T in tensors:
        for row in _annihilation_rows(T):
            n = float(np.linalg.norm(row))
            if n > 1e-12:
                rows.append(row / n)
    if len(rows) < 10:
        # curvature too degenerate to constrain anything (e.g. flat profiles)
        return CheckResult(name, 0.0, floor, False, (t, r, theta),
                           {"rows": len(rows), "kernel_dim": 10,
                            "kernel_max_det": 1.0})
    M = np.stack(rows)
    U, sv, Vt = np.linalg.svd(M)
    kernel = [Vt[i] for i in range(10) if sv[i] < 1e-8 * max(sv[0], 1.0)] \
        if len(sv) == 10 else []
    sigma_min = float(sv[-1]) if len(sv) == 10 else 0.0

    if not kernel:
        return CheckResult(name, sigma_min, floor, sigma_min > floor, (t, r, theta),
                           {"rows": len(rows), "kernel_dim": 0,
                            "comparison": "residual must exceed tolerance"})

    def max_det_on_sphere(basis, tries=400):
        best = 0.0
        k = len(basis)
        B = np.stack(basis)
        for _ in range(tries):
            x = rng.normal(size=k)
            x /= np.linalg.norm(x)
            best = max(best, abs(float(np.linalg.det(_sym_matrix(x @ B)))))
        return best

    kernel_det = max_det_on_sphere(kernel)
    if kernel_det > det_tol:
        # a nondegenerate candidate satisfies every constraint: not falsified
        return CheckResult(name, sigma_min, floor, False, (t, r, theta),
                           {"rows": len(rows), "kernel_dim": len(kernel),
                            "kernel_max_det": kernel_det})

    # only degenerate kernel members: price of the cheapest nondegenerate mix
    extra = [Vt[i] for i in range(10) if sv[i] >= 1e-8 * max(sv[0], 1.0)]
    best_residual = math.inf
    for _ in range(2000):
        xk = rng.normal(size=len(kernel))
        xe = rng.normal(size=len(extra))
        mix = rng.uniform(0.05, 1.0)
        x = (1 - mix) * (xk / np.linalg.norm(xk)) @ np.stack(kernel) \
            + mix * (xe / np.linalg.norm(xe)) @ np.stack(extra)
        x /= np.linalg.norm(x)
        if abs(float(np.linalg.det(_sym_matrix(x)))) < 1e-2:
            continue
        best_residual = min(best_residual, float(np.linalg.norm(M @ x)))
    if not math.isfinite(best_residual):
        best_residual = sigma_min if sigma_min > 0 else float(sv[-1])
    return CheckResult(name, best_residual, floor, best_residual > floor,
                       (t, r, theta),
                       {"rows": len(rows), "kernel_dim": len(kernel),
                        "kernel_max_det": kernel_det,
                        "comparison": "residual is the cheapest nondegenerate "
                                      "candidate's defect"})


def riemann_admissibility_floor(conn: ConnectionProfile, points: Sequence[tuple],
                                rng: np.random.Generator, n_velocities: int = 40) -> float:
    """min over (t, r, theta) points of the quadratic-fit residual."""
    vals = []
    for (t, r, theta) in points:
        res = riemann_falsification(conn, t, r, theta, rng, n_velocities)
        vals.append(res.residual)
    return min(vals)
