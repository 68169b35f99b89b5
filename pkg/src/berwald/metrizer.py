"""Construction of metrizing Finsler functions and affinely equivalent metrics.

Scale fields that the paper defines only up to quadrature (the power-law and
exponential conformal factors, the Class-3 potentials, the Class-4 flat
2-metric, the Class-5 conformal exponent) are represented by
`PotentialSystem`: their values are transported along axis-parallel paths
from a base point by a high-accuracy ODE solve, while their derivatives come
from the defining one-forms themselves, so every downstream derivative is
analytic in the transported values.  Path independence (closedness of the
defining form) is certified numerically, never assumed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field
from typing import Callable, Sequence

import numpy as np
from scipy.integrate import quad as _gk_quad

from .geometry_core import (ConnectionProfile, CurvatureProfile, Jet1, TangentPoint,
                            W_CORNER_GENERIC, curvature_profile)
from .geodesic_engine import integrate_ode
from .multijet import MultiJet, w2_jet
from .scalar_field import DomainError, Expression, Jet2, evaluate, parse


class MetrizerError(RuntimeError):
    pass


class NotClosed(MetrizerError):
    """The defining one-form of a potential is not closed."""


class PathDependent(MetrizerError):
    """Axis-path transport disagrees between leg orders."""


class LambdaNotConstant(MetrizerError):
    pass


class LambdaEqualsOne(MetrizerError):
    """F/D = 1: the connection is Levi-Civita of a Riemannian metric."""


class MuNotConstant(MetrizerError):
    """F/E undefined on part of the grid (E vanishes)."""


class DeltaVanishes(MetrizerError):
    pass


class NotRiemannMetrizable(MetrizerError):
    pass


class SingularQuadratic(MetrizerError):
    pass


class GradientNotClosed(NotClosed):
    pass


# ---------------------------------------------------------------------------
# Potential transport
# ---------------------------------------------------------------------------

class PotentialSystem:
    """Named scalar quantities defined by one-forms d(psi_i) = P_i dt + Q_i dr.

    ``P_i`` and ``Q_i`` are callables ``(t, r, vals) -> Jet1`` where ``vals``
    maps component names to current values (so later components may depend on
    earlier ones, as the Class-3 potential M does on G and K).  Values are
    transported from the base point along the L-shaped path
    (t0, r0) -> (t, r0) -> (t, r); derivatives are read off the one-forms.
    """

    def __init__(self, names: Sequence[str], P: Sequence[Callable], Q: Sequence[Callable],
                 base: tuple, base_values: Sequence[float] | None = None,
                 rtol: float = 1e-12, atol: float = 1e-12):
        self.names = list(names)
        self.P = list(P)
        self.Q = list(Q)
        self.base = (float(base[0]), float(base[1]))
        self.base_values = np.array(base_values if base_values is not None
                                    else [0.0] * len(self.names), dtype=float)
        self.rtol = rtol
        self.atol = atol
        self._value_cache = {}
        self._keys_t = []
        self._keys_r = []

    def _vals_dict(self, vec) -> dict:
        return dict(zip(self.names, vec))

    def _rhs_t(self, r0):
        def rhs(tau, y):
            vals = self._vals_dict(y)
            return np.array([p(tau, r0, vals).value for p in self.P])
        return rhs

    def _rhs_r(self, t0):
        def rhs(rho, y):
            vals = self._vals_dict(y)
            return np.array([q(t0, rho, vals).value for q in self.Q])
        return rhs

    def _transport_t(self, y, t_from, t_to, r_fixed):
        if t_to == t_from:
            return y
        out, _ = integrate_ode(self._rhs_t(r_fixed), y, [t_from, t_to],
                               rtol=self.rtol, atol=self.atol)
        return out[-1]

    def _transport_r(self, y, r_from, r_to, t_fixed):
        if r_to == r_from:
            return y
        out, _ = integrate_ode(self._rhs_r(t_fixed), y, [r_from, r_to],
                               rtol=self.rtol, atol=self.atol)
        return out[-1]

    def values(self, t: float, r: float) -> dict:
        key = (t, r)
        hit = self._value_cache.get(key)
        if hit is not None:
            return self._vals_dict(hit)
        # continue from the nearest already-transported point: the one-form is
        # certified closed, so any axis path from there gives the same value
        base_key = self.base
        if base_key not in self._value_cache:
            self._value_cache[base_key] = self.base_values.copy()
            self._keys_t = [base_key[0]]
            self._keys_r = [base_key[1]]
        keys_t = np.asarray(self._keys_t)
        keys_r = np.asarray(self._keys_r)
        i = int(np.argmin((keys_t - t) ** 2 + (keys_r - r) ** 2))
        t_from, r_from = float(keys_t[i]), float(keys_r[i])
        vec = self._value_cache[(t_from, r_from)].copy()
        vec = self._transport_t(vec, t_from, t, r_from)
        vec = self._transport_r(vec, r_from, r, t)
        self._value_cache[key] = vec
        self._keys_t.append(t)
        self._keys_r.append(r)
        return self._vals_dict(vec)

    def values_transposed(self, t: float, r: float) -> dict:
        """Same endpoint via the r-leg-first path; used for certification."""
        t0, r0 = self.base
        vec = self._transport_r(self.base_values.copy(), r0, r, t0)
        vec = self._transport_t(vec, t0, t, r)
        return self._vals_dict(vec)

    def jet2(self, name: str, t: float, r: float, vals: dict | None = None) -> Jet2:
        """Second-order jet of one component; derivatives from the one-form."""
        if vals is None:
            vals = self.values(t, r)
        i = self.names.index(name)
        pj = self.P[i](t, r, vals)
        qj = self.Q[i](t, r, vals)
        return Jet2(vals[name], pj.value, qj.value,
                    pj.dt, 0.5 * (pj.dr + qj.dt), qj.dr)

    def closedness_residual(self, probes: Sequence[tuple]) -> float:
        """max_i max_probes |d_t Q_i - d_r P_i|, derivatives from the Jet1s."""
        worst = 0.0
        for (t, r) in probes:
            vals = self.values(t, r)
            for p, q in zip(self.P, self.Q):
                pj = p(t, r, vals)
                qj = q(t, r, vals)
                worst = max(worst, abs(qj.dt - pj.dr))
        return worst

    def path_independence_residual(self, probes: Sequence[tuple]) -> float:
        worst = 0.0
        for (t, r) in probes:
            a = self.values(t, r)
            b = self.values_transposed(t, r)
            for n in self.names:
                worst = max(worst, abs(a[n] - b[n]) / (1.0 + abs(a[n])))
        return worst

    def certify(self, probes: Sequence[tuple], closed_tol: float = 1e-8,
                path_tol: float = 1e-8, label: str = "", analytic: bool = True,
                error_cls=NotClosed):
        if analytic:
            res = self.closedness_residual(probes)
            if res > closed_tol:
                raise error_cls("%s: one-form not closed (curl residual %.3g > %.3g)"
                                % (label or ",".join(self.names), res, closed_tol))
        res = self.path_independence_residual(probes)
        if res > path_tol:
            raise error_cls("%s: path-dependent transport (residual %.3g > %.3g)"
                            % (label or ",".join(self.names), res, path_tol))
        return res


def path_integral(P, Q, frm: tuple, to: tuple, closedness_probes=None,
                  closed_tol: float = 1e-8, agree_tol: float = 1e-8,
                  quad_tol: float = 1e-10) -> float:
    """Integral of P dt + Q dr from ``frm`` to ``to`` along the L-shaped path.

    P, Q are plain-value callables (t, r) -> float.  Closedness is checked by
    central differences on the probe set (default: corners and midpoints of
    the bounding box); the result is certified against the transposed path.
    """
    t0, r0 = frm
    t1, r1 = to
    if closedness_probes is None:
        ts = np.linspace(min(t0, t1), max(t0, t1), 5)
        rs = np.linspace(min(r0, r1), max(r0, r1), 5)
        closedness_probes = [(a, b) for a in ts for b in rs]
    h = 1e-5
    worst = 0.0
    for (a, b) in closedness_probes:
        qt = (Q(a + h, b) - Q(a - h, b)) / (2 * h)
        pr = (P(a, b + h) - P(a, b - h)) / (2 * h)
        worst = max(worst, abs(qt - pr))
    if worst > closed_tol:
        raise NotClosed("one-form not closed: curl residual %.3g > %.3g" % (worst, closed_tol))

    def seg(f, a, b):
        if a == b:
            return 0.0
        val, _err = _gk_quad(f, a, b, epsabs=quad_tol, epsrel=1e-12, limit=200)
        return val

    first = seg(lambda x: P(x, r0), t0, t1) + seg(lambda y: Q(t1, y), r0, r1)
    second = seg(lambda y: Q(t0, y), r0, r1) + seg(lambda x: P(x, r1), t0, t1)
    if abs(first - second) > agree_tol * (1.0 + abs(first)):
        raise NotClosed("path integral disagrees between leg orders: %.3g vs %.3g"
                        % (first, second))
    return first


# ---------------------------------------------------------------------------
# Evaluator plumbing
# ---------------------------------------------------------------------------

def lift_jet1(j: Jet1) -> MultiJet:
    return MultiJet.from_jet2(Jet2(j.value, j.dt, j.dr))


def _uv_jets(conn: ConnectionProfile, p: TangentPoint):
    """u = tdot - a rdot and v = c rdot^2 + 2 b tdot rdot - w^2 as MultiJets."""
    aj = MultiJet.from_jet2(conn.field_a().jet(p.t, p.r))
    bj = MultiJet.from_jet2(conn.field_b().jet(p.t, p.r))
    cj = MultiJet.from_jet2(conn.field_c().jet(p.t, p.r))
    _, _, th, td, rd, thd, phd = MultiJet.seed_point(p.t, p.r, p.theta, p.tdot,
                                                     p.rdot, p.thetadot, p.phidot)
    u = td - aj * rd
    v = cj * rd * rd + 2.0 * bj * td * rd - w2_jet(th, thd, phd)
    return u, v


class _CurvatureCache:
    def __init__(self, conn: ConnectionProfile):
        self.conn = conn
        self._cache = {}

    def __call__(self, t: float, r: float) -> CurvatureProfile:
        key = (t, r)
        cp = self._cache.get(key)
        if cp is None:
            cp = curvature_profile(self.conn, t, r)
            self._cache[key] = cp
        return cp


# ---------------------------------------------------------------------------
# Finsler forms
# ---------------------------------------------------------------------------

@dataclass
class PowerLawForm:
    """L = theta(t,r) u^{2-2 lambda} (v + rho u^2)^lambda (Class 1)."""

    conn: ConnectionProfile
    lam: float
    rho: Callable[[float, float], Jet1]
    scale_pot: PotentialSystem          # theta = exp(psi)
    log_scale: float = 0.0
    tag: str = "power-law"
    domain_floor: float = 1e-6

    def _pieces(self, p: TangentPoint):
        u, v = _uv_jets(self.conn, p)
        rho_j = lift_jet1(self.rho(p.t, p.r))
        base = v + rho_j * u * u
        return u, base

    def admissible(self, p: TangentPoint) -> bool:
        try:
            u, base = self._pieces(p)
        except (DomainError, ZeroDivisionError):
            return False
        return u.value > self.domain_floor and base.value > self.domain_floor

    def jet(self, p: TangentPoint) -> MultiJet:
        u, base = self._pieces(p)
        psi = MultiJet.from_jet2(self.scale_pot.jet2("psi", p.t, p.r)) + self.log_scale
        return psi.exp() * u ** (2.0 - 2.0 * self.lam) * base ** self.lam

    def scaled(self, c: float) -> "PowerLawForm":
        if c <= 0.0:
            raise ValueError("scale must be positive")
        return PowerLawForm(self.conn, self.lam, self.rho, self.scale_pot,
                            self.log_scale + math.log(c), self.tag, self.domain_floor)

    def describe(self) -> dict:
        return {"kind": self.tag, "lambda": self.lam,
                "scale": "exp(path integral of (G - lambda*Gt) dt + (H - lambda*Ht) dr)"}


@dataclass
class ExponentialForm:
    """L = phi(t,r) u^2 exp(mu v / u^2) (Class 2)."""

    conn: ConnectionProfile
    mu: Callable[[float, float], Jet1]
    scale_pot: PotentialSystem          # phi = exp(psi)
    log_scale: float = 0.0
    tag: str = "exponential"
    domain_floor: float = 1e-6

    def admissible(self, p: TangentPoint) -> bool:
        try:
            u, _ = _uv_jets(self.conn, p)
        except (DomainError, ZeroDivisionError):
            return False
        return abs(u.value) > self.domain_floor

    def jet(self, p: TangentPoint) -> MultiJet:
        u, v = _uv_jets(self.conn, p)
        mu_j = lift_jet1(self.mu(p.t, p.r))
        psi = MultiJet.from_jet2(self.scale_pot.jet2("psi", p.t, p.r)) + self.log_scale
        return psi.exp() * u * u * (mu_j * v / (u * u)).exp()

    def scaled(self, c: float) -> "ExponentialForm":
        if c <= 0.0:
            raise ValueError("scale must be positive")
        return ExponentialForm(self.conn, self.mu, self.scale_pot,
                               self.log_scale + math.log(c), self.tag, self.domain_floor)

    def describe(self) -> dict:
        return {"kind": self.tag,
                "scale": "exp(path integral of (G + 2 k4 b mu) dt + (H + 2 k6 b mu) dr)"}


_THETA_BUILTINS = {"identity": parse("z"), "square": parse("z^2")}


@dataclass
class Class3FinslerForm:
    """L = e^G u^2 Theta(z e^{-(G - 2K)} + M), z = v / u^2 (Class 3)."""

    conn: ConnectionProfile
    pots: PotentialSystem               # components "G", "K", "M"
    m_shift: float
    theta_expr: Expression
    log_scale: float = 0.0
    tag: str = "class-3"
    domain_floor: float = 1e-6

    def admissible(self, p: TangentPoint) -> bool:
        try:
            u, _ = _uv_jets(self.conn, p)
        except (DomainError, ZeroDivisionError):
            return False
        return abs(u.value) > self.domain_floor

    def jet(self, p: TangentPoint) -> MultiJet:
        u, v = _uv_jets(self.conn, p)
        vals = self.pots.values(p.t, p.r)
        Gj = MultiJet.from_jet2(self.pots.jet2("G", p.t, p.r, vals))
        Kj = MultiJet.from_jet2(self.pots.jet2("K", p.t, p.r, vals))
        Mj = MultiJet.from_jet2(self.pots.jet2("M", p.t, p.r, vals)) + self.m_shift
        z = v / (u * u)
        arg = z * (-(Gj - 2.0 * Kj)).exp() + Mj
        theta = evaluate(self.theta_expr, {"z": arg})
        if not isinstance(theta, MultiJet):
            theta = MultiJet.constant(theta)
        return (Gj + self.log_scale).exp() * u * u * theta

    def describe(self) -> dict:
        return {"kind": self.tag, "m_shift": self.m_shift}


@dataclass
class RiemannForm:
    """A = att tdot^2 + 2 atr tdot rdot + arr rdot^2 + aw w^2.

    Coefficients are (t, r) fields with jets; ``christoffels`` recovers the
    Levi-Civita coefficients in the k-table layout for round-trip checks.
    """

    att: Callable[[float, float], Jet2]
    atr: Callable[[float, float], Jet2]
    arr: Callable[[float, float], Jet2]
    aw: Callable[[float, float], Jet2]
    tag: str = "riemann"
    signature_hint: str = ""
    meta: dict = dc_field(default_factory=dict)

    def admissible(self, p: TangentPoint) -> bool:
        return True

    def coefficient_jets(self, t: float, r: float):
        return self.att(t, r), self.atr(t, r), self.arr(t, r), self.aw(t, r)

    def jet(self, p: TangentPoint) -> MultiJet:
        att, atr, arr, aw = self.coefficient_jets(p.t, p.r)
        _, _, th, td, rd, thd, phd = MultiJet.seed_point(p.t, p.r, p.theta, p.tdot,
                                                         p.rdot, p.thetadot, p.phidot)
        att_j, atr_j, arr_j, aw_j = (MultiJet.from_jet2(x) for x in (att, atr, arr, aw))
        return (att_j * td * td + 2.0 * atr_j * td * rd + arr_j * rd * rd
                + aw_j * w2_jet(th, thd, phd))

    def values(self, t: float, r: float) -> tuple:
        att, atr, arr, aw = self.coefficient_jets(t, r)
        return att.value, atr.value, arr.value, aw.value

    def tr_block_det(self, t: float, r: float) -> float:
        att, atr, arr, _ = self.values(t, r)
        return att * arr - atr * atr

    def christoffels(self, t: float, r: float) -> np.ndarray:
        """k1..k12 of the Levi-Civita connection of A at (t, r)."""
        att, atr, arr, aw = self.coefficient_jets(t, r)
        B = np.array([[att.value, atr.value], [atr.value, arr.value]])
        dB = {0: np.array([[att.dt, atr.dt], [atr.dt, arr.dt]]),
              1: np.array([[att.dr, atr.dr], [atr.dr, arr.dr]])}
        Binv = np.linalg.inv(B)
        Gam2 = np.zeros((2, 2, 2))
        for a in range(2):
            for b in range(2):
                for c in range(2):
                    s = 0.0
                    for d in range(2):
                        s += Binv[a, d] * (dB[b][d, c] + dB[c][b, d] - dB[d][b, c])
                    Gam2[a, b, c] = 0.5 * s
        if aw.value == 0.0:
            raise DomainError("degenerate angular block")
        k = np.zeros(12)
        k[0] = Gam2[0, 0, 0]          # k1
        k[1] = Gam2[0, 0, 1]          # k2
        k[2] = Gam2[0, 1, 1]          # k3
        k[3] = Gam2[1, 0, 0]          # k4
        k[4] = Gam2[1, 1, 1]          # k5
        k[5] = Gam2[1, 0, 1]          # k6
        grad_w = np.array([aw.dt, aw.dr])
        k[6] = -0.5 * (Binv[0] @ grad_w)   # k7
        k[9] = -0.5 * (Binv[1] @ grad_w)   # k10
        k[7] = 0.5 * aw.dt / aw.value      # k8
        k[8] = 0.5 * aw.dr / aw.value      # k9
        return k

    def describe(self) -> dict:
        d = {"kind": self.tag, "signature_hint": self.signature_hint}
        d.update({k: v for k, v in self.meta.items() if isinstance(v, (int, float, str))})
        return d


def constant_field(v: float) -> Callable[[float, float], Jet2]:
    def f(t, r):
        return Jet2(v)
    return f


# ---------------------------------------------------------------------------
# Builders
# ---------------------------------------------------------------------------

def _grid_probes(grid: Sequence[tuple], n: int = 9) -> list:
    grid = list(grid)
    if len(grid) <= n:
        return grid
    idx = np.linspace(0, len(grid) - 1, n).astype(int)
    return [grid[i] for i in idx]


def _base_point(grid: Sequence[tuple]) -> tuple:
    return min(grid, key=lambda q: (q[0], q[1]))


def build_power_law(conn: ConnectionProfile, grid: Sequence[tuple],
                    lam_var_tol: float = 1e-8) -> PowerLawForm:
    """Class-1 constructor: lambda = F/D (grid-constant), rho = E/D field,
    conformal factor from the (G - lambda Gt, H - lambda Ht) one-form."""
    cpc = _CurvatureCache(conn)
    lams = []
    for (t, r) in grid:
        cp = cpc(t, r)
        if cp.corner != W_CORNER_GENERIC:
            raise LambdaNotConstant("w-corner not generic at (%g, %g)" % (t, r))
        D, _E, F = cp.DEF
        if abs(D.value) < 1e-12 * (1.0 + abs(F.value)):
            raise LambdaNotConstant("D vanishes at (t, r) = (%g, %g)" % (t, r))
        lams.append(F.value / D.value)
    lams = np.array(lams)
    if float(np.var(lams)) > lam_var_tol:
        raise LambdaNotConstant("lambda = F/D varies over the grid (variance %.3g)"
                                % float(np.var(lams)))
    lam = float(np.mean(lams))
    if abs(lam - 1.0) < 1e-8:
        raise LambdaEqualsOne("lambda = 1: Riemannian case, not a proper Class-1 input")

    def rho(t, r) -> Jet1:
        cp = cpc(t, r)
        D, E, _F = cp.DEF
        return E / D

    def P(t, r, vals) -> Jet1:
        G, Gt, _H, _Ht = cpc(t, r).GH
        return G - lam * Gt

    def Q(t, r, vals) -> Jet1:
        _G, _Gt, H, Ht = cpc(t, r).GH
        return H - lam * Ht

    pot = PotentialSystem(["psi"], [P], [Q], _base_point(grid))
    pot.certify(_grid_probes(grid), label="power-law scale")
    return PowerLawForm(conn, lam, rho, pot)


def build_exponential(conn: ConnectionProfile, grid: Sequence[tuple]) -> ExponentialForm:
    """Class-2 constructor: mu = F/E (accepted as a field; the paper's own
    example has mu depending on (t, r)), scale from (G + 2 k4 b mu, H + 2 k6 b mu)."""
    cpc = _CurvatureCache(conn)
    for (t, r) in grid:
        cp = cpc(t, r)
        if cp.corner != W_CORNER_GENERIC:
            raise MuNotConstant("w-corner not generic at (%g, %g)" % (t, r))
        _D, E, F = cp.DEF
        if abs(E.value) < 1e-12 * (1.0 + abs(F.value)):
            raise MuNotConstant("E vanishes at (t, r) = (%g, %g); mu = F/E undefined" % (t, r))

    def mu(t, r) -> Jet1:
        _D, E, F = cpc(t, r).DEF
        return F / E

    def P(t, r, vals) -> Jet1:
        cp = cpc(t, r)
        G = cp.GH[0]
        k4 = Jet1(cp.k_jets[3].value, cp.k_jets[3].dt, cp.k_jets[3].dr)
        b = cp.abc[1]
        return G + 2.0 * k4 * b * mu(t, r)

    def Q(t, r, vals) -> Jet1:
        cp = cpc(t, r)
        H = cp.GH[2]
        k6 = Jet1(cp.k_jets[5].value, cp.k_jets[5].dt, cp.k_jets[5].dr)
        b = cp.abc[1]
        return H + 2.0 * k6 * b * mu(t, r)

    pot = PotentialSystem(["psi"], [P], [Q], _base_point(grid))
    pot.certify(_grid_probes(grid), label="exponential scale")
    return ExponentialForm(conn, mu, pot)


def _k_jet1(cp: CurvatureProfile, i: int) -> Jet1:
    j = cp.k_jets[i - 1]
    return Jet1(j.value, j.dt, j.dr)


def build_class3_potentials(conn: ConnectionProfile, grid: Sequence[tuple]) -> PotentialSystem:
    """G from (G, H), K from (k8, k9), M from the e^{-(G-2K)} b (k4, k6) form."""
    cpc = _CurvatureCache(conn)

    def P_G(t, r, vals) -> Jet1:
        return cpc(t, r).GH[0]

    def Q_G(t, r, vals) -> Jet1:
        return cpc(t, r).GH[2]

    def P_K(t, r, vals) -> Jet1:
        return _k_jet1(cpc(t, r), 8)

    def Q_K(t, r, vals) -> Jet1:
        return _k_jet1(cpc(t, r), 9)

    def _m_form(t, r, vals, which: int) -> Jet1:
        cp = cpc(t, r)
        b = cp.abc[1]
        kf = _k_jet1(cp, which)
        G, _Gt, H, _Ht = cp.GH
        k8 = _k_jet1(cp, 8)
        k9 = _k_jet1(cp, 9)
        # exp(-(G - 2K)) with total (t, r) derivatives from the defining forms
        erg = math.exp(-(vals["G"] - 2.0 * vals["K"]))
        carrier = Jet1(erg,
                       -erg * (G.value - 2.0 * k8.value),
                       -erg * (H.value - 2.0 * k9.value))
        return 2.0 * b * kf * carrier

    def P_M(t, r, vals) -> Jet1:
        return _m_form(t, r, vals, 4)

    def Q_M(t, r, vals) -> Jet1:
        return _m_form(t, r, vals, 6)

    return PotentialSystem(["G", "K", "M"], [P_G, P_K, P_M], [Q_G, Q_K, Q_M],
                           _base_point(grid))


def _choose_m_shift(pots: PotentialSystem, cpc, grid, floor_tol: float = 1e-6):
    """Shift of the free additive constant in M keeping Delta away from zero."""
    delta0 = []
    wgt = []
    for (t, r) in grid:
        cp = cpc(t, r)
        a, b, c = (x.value for x in cp.abc)
        vals = pots.values(t, r)
        eg = math.exp(vals["G"])
        e2k = math.exp(2.0 * vals["K"])
        W = eg * (2.0 * a * b + c)
        delta0.append(vals["M"] * W - b * b * e2k)
        wgt.append(W)
    delta0 = np.array(delta0)
    wgt = np.array(wgt)
    scale = 1.0 + float(np.max(np.abs(delta0))) + float(np.max(np.abs(wgt)))
    forbidden = sorted(-delta0[np.abs(wgt) > 1e-12 * scale] / wgt[np.abs(wgt) > 1e-12 * scale])
    candidates = [0.0, 1.0, -1.0, 2.0, -2.0]
    if forbidden:
        lo, hi = forbidden[0] - 1.0, forbidden[-1] + 1.0
        candidates += [lo, hi]
        candidates += [0.5 * (forbidden[i] + forbidden[i + 1]) for i in range(len(forbidden) - 1)]

    def score(m):
        return float(np.min(np.abs(delta0 + m * wgt)))

    best = max(candidates, key=score)
    if score(best) <= floor_tol * scale:
        raise DeltaVanishes("no additive constant for M keeps Delta away from zero "
                            "(best min |Delta| = %.3g)" % score(best))
    return best


def build_class3(conn: ConnectionProfile, grid: Sequence[tuple],
                 theta: str | Expression = "identity") -> tuple:
    """Class-3 constructor.  Returns (Class3FinslerForm, RiemannForm).

    The Riemannian member is A = v e^{2K} + (e^G M) u^2; the Finsler member
    carries the chosen free function Theta (identity reproduces A exactly).
    """
    cpc = _CurvatureCache(conn)
    for (t, r) in grid:
        if cpc(t, r).corner != W_CORNER_GENERIC:
            raise NotClosed("w-corner degenerate at (%g, %g): not a Class-3 input" % (t, r))
    pots = build_class3_potentials(conn, grid)
    pots.certify(_grid_probes(grid), label="class-3 potentials")
    m_shift = _choose_m_shift(pots, cpc, grid)

    if isinstance(theta, str):
        theta_expr = _THETA_BUILTINS.get(theta)
        if theta_expr is None:
            theta_expr = parse(theta)
    else:
        theta_expr = theta

    a_f, b_f, c_f = conn.field_a(), conn.field_b(), conn.field_c()

    def _coeff(which: str):
        def f(t, r) -> Jet2:
            vals = pots.values(t, r)
            Gj = pots.jet2("G", t, r, vals)
            Kj = pots.jet2("K", t, r, vals)
            Mj = pots.jet2("M", t, r, vals) + m_shift
            eg_m = Gj.exp() * Mj
            e2k = (2.0 * Kj).exp()
            if which == "att":
                return eg_m
            if which == "atr":
                return b_f.jet(t, r) * e2k - a_f.jet(t, r) * eg_m
            if which == "arr":
                return c_f.jet(t, r) * e2k + a_f.jet(t, r) * a_f.jet(t, r) * eg_m
            return -e2k
        return f

    riemann = RiemannForm(_coeff("att"), _coeff("atr"), _coeff("arr"), _coeff("aw"),
                          tag="class-3", meta={"m_shift": m_shift, "potentials": pots})
    finsler = Class3FinslerForm(conn, pots, m_shift, theta_expr)
    return finsler, riemann


def class3_delta(riemann: RiemannForm, t: float, r: float) -> float:
    """Delta = M e^G (2ab + c) - b^2 e^{2K} = e^{-2K} det(tr block)."""
    pots: PotentialSystem = riemann.meta["potentials"]
    vals = pots.values(t, r)
    return riemann.tr_block_det(t, r) / math.exp(2.0 * vals["K"])


SIGNATURES = {"lorentzian": ((1.0, 0.0, -1.0), -1.0),
              "euclidean": ((1.0, 0.0, 1.0), 1.0)}


def build_class4(conn: ConnectionProfile, grid: Sequence[tuple],
                 signature: str = "lorentzian", path_tol: float = 1e-8) -> RiemannForm:
    """Class-4 constructor: parallel-transport a flat 2-metric h over the
    tr-corner and attach +/- w^2.  Path independence certifies flatness."""
    try:
        h0, aw_sign = SIGNATURES[signature]
    except KeyError:
        raise ValueError("signature must be one of %s" % list(SIGNATURES))
    cpc = _CurvatureCache(conn)

    def _k(t, r, i) -> Jet1:
        return _k_jet1(cpc(t, r), i)

    # metric-compatibility one-form: d h = (M_t h) dt + (M_r h) dr
    def P_tt(t, r, v) -> Jet1:
        return 2.0 * (_k(t, r, 1) * v["h_tt"] + _k(t, r, 4) * v["h_tr"])

    def P_tr(t, r, v) -> Jet1:
        return (_k(t, r, 2) * v["h_tt"] + (_k(t, r, 1) + _k(t, r, 6)) * v["h_tr"]
                + _k(t, r, 4) * v["h_rr"])

    def P_rr(t, r, v) -> Jet1:
        return 2.0 * (_k(t, r, 2) * v["h_tr"] + _k(t, r, 6) * v["h_rr"])

    def Q_tt(t, r, v) -> Jet1:
        return 2.0 * (_k(t, r, 2) * v["h_tt"] + _k(t, r, 6) * v["h_tr"])

    def Q_tr(t, r, v) -> Jet1:
        return (_k(t, r, 3) * v["h_tt"] + (_k(t, r, 2) + _k(t, r, 5)) * v["h_tr"]
                + _k(t, r, 6) * v["h_rr"])

    def Q_rr(t, r, v) -> Jet1:
        return 2.0 * (_k(t, r, 3) * v["h_tr"] + _k(t, r, 5) * v["h_rr"])

    pots = PotentialSystem(["h_tt", "h_tr", "h_rr"],
                           [P_tt, P_tr, P_rr], [Q_tt, Q_tr, Q_rr],
                           _base_point(grid), base_values=h0)
    res = pots.path_independence_residual(_grid_probes(grid))
    if res > path_tol:
        raise PathDependent("flat-transport legs disagree (residual %.3g > %.3g): "
                            "tr-corner is not flat" % (res, path_tol))

    def _coeff(name: str):
        def f(t, r) -> Jet2:
            return pots.jet2(name, t, r)
        return f

    return RiemannForm(_coeff("h_tt"), _coeff("h_tr"), _coeff("h_rr"),
                       constant_field(aw_sign), tag="class-4",
                       signature_hint=signature, meta={"potentials": pots})


def build_class5(conn: ConnectionProfile, grid: Sequence[tuple], C1: float = 1.0,
                 C2: float = 1.0, sym_tol: float = 1e-8, closed_tol: float = 1e-6,
                 quad_floor: float = 1e-8) -> RiemannForm:
    """Class-5 constructor: recover the conformal exponent phi from the
    horizontal-constancy equations and assemble
    A = C1 e^{-2 phi} (-a3 tdot^2 + 2 a1 tdot rdot + a2 rdot^2) + C2 w^2.

    The tr-block is taken as the signed quadratic form; the displayed |.|
    variant coincides with it up to the branch sign of the quadratic.
    """
    if C1 == 0.0 or C2 == 0.0:
        raise ValueError("C1 and C2 must be nonzero")
    cpc = _CurvatureCache(conn)
    worst_sym = 0.0
    scale = 0.0
    for (t, r) in grid:
        cp = cpc(t, r)
        worst_sym = max(worst_sym, abs(cp.a[1].value + cp.a[4].value))
        local = float(np.max(np.abs(cp.a_values())))
        scale = max(scale, local)
        if abs(cp.a[1].value * cp.a[4].value - cp.a[2].value * cp.a[3].value) \
                < quad_floor * (1.0 + local * local):
            raise SingularQuadratic("a1 a4 - a2 a3 vanishes at (t, r) = (%g, %g)" % (t, r))
    if worst_sym > sym_tol * (1.0 + scale):
        raise NotRiemannMetrizable(
            "a1 + a4 != 0 on the grid (max %.3g): Ricci tensor not symmetric" % worst_sym)

    # fixed admissible velocity for the gradient recovery
    def q_of(cp: CurvatureProfile, td, rd) -> float:
        return -cp.a[3].value * td * td + 2.0 * cp.a[1].value * td * rd \
            + cp.a[2].value * rd * rd

    xdot = (1.0, 0.0)
    if any(abs(q_of(cpc(t, r), *xdot)) < quad_floor * (1.0 + scale) for (t, r) in grid):
        xdot = (1.0, 0.5)
        if any(abs(q_of(cpc(t, r), *xdot)) < quad_floor * (1.0 + scale) for (t, r) in grid):
            raise SingularQuadratic("quadratic vanishes at both candidate velocities")

    td, rd = xdot

    def _phi_partial(t, r, horizontal: int) -> float:
        cp = cpc(t, r)
        a1, a2, a3 = cp.a[1], cp.a[2], cp.a[3]
        Q = q_of(cp, td, rd)
        if horizontal == 0:
            dQ = -a3.dt * td * td + 2.0 * a1.dt * td * rd + a2.dt * rd * rd
            n_t = cp.k_jets[0].value * td + cp.k_jets[1].value * rd   # N^t_t
            n_r = cp.k_jets[3].value * td + cp.k_jets[5].value * rd   # N^r_t
        else:
            dQ = -a3.dr * td * td + 2.0 * a1.dr * td * rd + a2.dr * rd * rd
            n_t = cp.k_jets[1].value * td + cp.k_jets[2].value * rd   # N^t_r
            n_r = cp.k_jets[5].value * td + cp.k_jets[4].value * rd   # N^r_r
        ddot_t = 2.0 * (a1.value * rd - a3.value * td)
        ddot_r = 2.0 * (a1.value * td + a2.value * rd)
        return (dQ - n_t * ddot_t - n_r * ddot_r) / (2.0 * Q)

    def P_phi(t, r, vals) -> Jet1:
        return Jet1(_phi_partial(t, r, 0))

    def Q_phi(t, r, vals) -> Jet1:
        return Jet1(_phi_partial(t, r, 1))

    pot = PotentialSystem(["phi"], [P_phi], [Q_phi], _base_point(grid))
    # closedness by central differences: the one-form's own derivatives would
    # need third derivatives of the k_i, which jets do not carry
    h = 1e-5
    worst = 0.0
    for (t, r) in _grid_probes(grid):
        qt = (_phi_partial(t + h, r, 1) - _phi_partial(t - h, r, 1)) / (2 * h)
        pr = (_phi_partial(t, r + h, 0) - _phi_partial(t, r - h, 0)) / (2 * h)
        worst = max(worst, abs(qt - pr))
    if worst > closed_tol:
        raise GradientNotClosed("recovered gradient of phi is not closed "
                                "(residual %.3g > %.3g)" % (worst, closed_tol))
    pot.certify(_grid_probes(grid), label="class-5 phi", analytic=False,
                error_cls=GradientNotClosed)

    def _coeff(which: str):
        def f(t, r) -> Jet2:
            cp = cpc(t, r)
            phij = pot.jet2("phi", t, r)
            carrier = (-2.0 * Jet1(phij.value, phij.dt, phij.dr)).exp()
            if which == "att":
                coeff = -1.0 * cp.a[3]
            elif which == "atr":
                coeff = cp.a[1]
            else:
                coeff = cp.a[2]
            out = C1 * carrier * coeff
            return Jet2(out.value, out.dt, out.dr)
        return f

    return RiemannForm(_coeff("att"), _coeff("atr"), _coeff("arr"),
                       constant_field(C2), tag="class-5",
                       meta={"potentials": pot, "C1": C1, "C2": C2,
                             "recovery_velocity": (td, rd)})


def class5_det_formula(riemann: RiemannForm, conn: ConnectionProfile,
                       t: float, r: float, theta: float) -> float:
    """|det g| predicted: C1^2 C2^2 e^{-4 phi} |a1^2 + a2 a3| sin^2(theta)."""
    pot: PotentialSystem = riemann.meta["potentials"]
    C1 = riemann.meta["C1"]
    C2 = riemann.meta["C2"]
    cp = curvature_profile(conn, t, r)
    phi = pot.values(t, r)["phi"]
    val = (C1 ** 2) * (C2 ** 2) * math.exp(-4.0 * phi) \
        * abs(cp.a[1].value ** 2 + cp.a[2].value * cp.a[3].value) * math.sin(theta) ** 2
    return val
