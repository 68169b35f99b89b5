"""Connection/curvature data model and pointwise geometric computations.

The connection is the general SO(3)-invariant torsion-free one in spherical
coordinates (t, r, theta, phi), parametrized by twelve coefficient functions
k1..k12 of (t, r).  Its nonlinear-connection curvature is described by
fourteen coefficient functions a1..a14 of (t, r); the six horizontal Lie
brackets [delta_a, delta_b] are vertical vectors linear in the velocities
with those coefficients, and second-level brackets follow from

    [delta_c, [delta_a, delta_b]] = (delta_c R^e_ab + R^d_ab Gamma^e_cd) ddot_e.

The vertical span of all of these, maximized over sample points, gives the
holonomy-distribution rank used by the classifier.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .scalar_field import Jet2, ScalarField

T, R, TH, PH = range(4)
COORD_NAMES = ("t", "r", "theta", "phi")


class GeometryError(ValueError):
    pass


class UnsupportedConnection(GeometryError):
    """k11/k12 outside the classified 10-function family."""


class K10Degenerate(GeometryError):
    """k10 vanishes while the rest of the w-corner does not; (a, b, c) undefined."""


class InsufficientSamples(GeometryError):
    pass


# ---------------------------------------------------------------------------
# First-order jets of derived coefficients (value + d/dt + d/dr)
# ---------------------------------------------------------------------------

class Jet1:
    """Value with first (t, r)-partials; the order curvature coefficients carry."""

    __slots__ = ("value", "dt", "dr")

    def __init__(self, value, dt=0.0, dr=0.0):
        self.value = float(value)
        self.dt = float(dt)
        self.dr = float(dr)

    @staticmethod
    def _lift(x):
        return x if isinstance(x, Jet1) else Jet1(x)

    def __add__(self, o):
        o = self._lift(o)
        return Jet1(self.value + o.value, self.dt + o.dt, self.dr + o.dr)

    __radd__ = __add__

    def __neg__(self):
        return Jet1(-self.value, -self.dt, -self.dr)

    def __sub__(self, o):
        return self + (-self._lift(o))

    def __rsub__(self, o):
        return (-self) + o

    def __mul__(self, o):
        o = self._lift(o)
        return Jet1(self.value * o.value,
                    self.dt * o.value + self.value * o.dt,
                    self.dr * o.value + self.value * o.dr)

    __rmul__ = __mul__

    def __truediv__(self, o):
        o = self._lift(o)
        v = o.value
        if v == 0.0:
            raise ZeroDivisionError("Jet1 division by zero")
        inv = Jet1(1.0 / v, -o.dt / v ** 2, -o.dr / v ** 2)
        return self * inv

    def __rtruediv__(self, o):
        return self._lift(o) / self

    def exp(self):
        e = math.exp(self.value)
        return Jet1(e, e * self.dt, e * self.dr)

    def __repr__(self):
        return "Jet1(%g; dt=%g, dr=%g)" % (self.value, self.dt, self.dr)


def value_of(j: Jet1) -> float:
    return j.value


def _J(k: Jet2) -> Jet1:
    return Jet1(k.value, k.dt, k.dr)


def _Dt(k: Jet2) -> Jet1:
    return Jet1(k.dt, k.dtt, k.dtr)


def _Dr(k: Jet2) -> Jet1:
    return Jet1(k.dr, k.dtr, k.drr)


# ---------------------------------------------------------------------------
# Tangent points and connection profiles
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TangentPoint:
    t: float
    r: float
    theta: float
    phi: float
    tdot: float
    rdot: float
    thetadot: float
    phidot: float

    def __post_init__(self):
        if self.tdot == self.rdot == self.thetadot == self.phidot == 0.0:
            raise ValueError("zero velocity: point must lie in TM minus the zero section")
        if math.sin(self.theta) == 0.0:
            raise ValueError("sin(theta) = 0: outside the spherical chart")

    @property
    def velocity(self) -> np.ndarray:
        return np.array([self.tdot, self.rdot, self.thetadot, self.phidot])

    @property
    def position(self) -> np.ndarray:
        return np.array([self.t, self.r, self.theta, self.phi])

    @property
    def w2(self) -> float:
        return self.thetadot ** 2 + self.phidot ** 2 * math.sin(self.theta) ** 2

    @staticmethod
    def from_state(state: Sequence[float]) -> "TangentPoint":
        return TangentPoint(*state)

    def state(self) -> np.ndarray:
        return np.array([self.t, self.r, self.theta, self.phi,
                         self.tdot, self.rdot, self.thetadot, self.phidot])


_K_ROLES = (
    "Gamma^t_tt", "Gamma^t_tr", "Gamma^t_rr", "Gamma^r_tt", "Gamma^r_rr",
    "Gamma^r_tr", "Gamma^t_thth", "Gamma^ph_pht", "Gamma^ph_phr",
    "Gamma^r_thth", "sin(th)*Gamma^ph_tth", "sin(th)*Gamma^ph_rth")


class ConnectionProfile:
    """The twelve k_i(t, r) of an SO(3)-invariant torsion-free connection.

    Missing entries default to the zero field.  Keys of ``fields`` are 1..12.
    """

    def __init__(self, fields: Mapping[int, object], params: Mapping[str, float] | None = None):
        params = dict(params or {})
        self.params = params
        ks = []
        for i in range(1, 13):
            f = fields.get(i)
            if f is None:
                ks.append(ScalarField.zero())
            elif isinstance(f, ScalarField):
                merged = dict(f.params)
                merged.update(params)
                ks.append(ScalarField(f.expr, merged))
            else:
                ks.append(ScalarField(f, params))
        self.k = tuple(ks)  # k[0] is k1
        self._abc_fields = None

    def k_field(self, i: int) -> ScalarField:
        return self.k[i - 1]

    def k_jets(self, t: float, r: float) -> list:
        return [f.jet(t, r) for f in self.k]

    def k_values(self, t: float, r: float) -> np.ndarray:
        return np.array([f.value(t, r) for f in self.k])

    def has_angular_rotation(self) -> bool:
        """True when k11 or k12 is structurally present."""
        return not (self.k[10].is_structural_zero() and self.k[11].is_structural_zero())

    def require_classifiable(self, grid: Iterable[tuple] = (), tol: float = 1e-12):
        """The classification covers the 10-function family only (k11 = k12 = 0)."""
        if self.k[10].is_structural_zero() and self.k[11].is_structural_zero():
            return
        for (t, r) in grid:
            if abs(self.k[10].value(t, r)) > tol or abs(self.k[11].value(t, r)) > tol:
                raise UnsupportedConnection(
                    "k11/k12 nonzero at (t, r) = (%g, %g); outside the classified family" % (t, r))
        if not grid:
            raise UnsupportedConnection("k11/k12 structurally nonzero")

    # convenient derived fields (exact jets through the expression algebra)
    def _abc(self):
        if self._abc_fields is None:
            k7, k8, k9, k10 = (self.k_field(i) for i in (7, 8, 9, 10))
            self._abc_fields = (k7 / k10, k8 / k10,
                                (k9 * k10 - k7 * k8) / (k10 * k10))
        return self._abc_fields

    def field_a(self) -> ScalarField:
        return self._abc()[0]

    def field_b(self) -> ScalarField:
        return self._abc()[1]

    def field_c(self) -> ScalarField:
        return self._abc()[2]


# ---------------------------------------------------------------------------
# Curvature coefficients
# ---------------------------------------------------------------------------

W_CORNER_GENERIC = "generic"
W_CORNER_ZERO = "w_zero"
W_CORNER_K10_DEGENERATE = "k10_degenerate"


@dataclass
class CurvatureProfile:
    t: float
    r: float
    a: dict                      # 1..14 -> Jet1
    corner: str                  # one of the W_CORNER_* markers
    abc: Optional[tuple] = None  # (a, b, c) as Jet1 when defined
    DEF: Optional[tuple] = None  # (D, E, F) as Jet1 when abc defined
    GH: Optional[tuple] = None   # (G, Gtilde, H, Htilde) as Jet1 when abc defined
    k_jets: list = field(default_factory=list)

    def a_values(self) -> np.ndarray:
        return np.array([self.a[i].value for i in range(1, 15)])

    def ricci_asymmetry(self) -> float:
        return self.a[1].value + self.a[4].value + 2.0 * self.a[5].value


def curvature_profile(conn: ConnectionProfile, t: float, r: float,
                      corner_tol: float = 1e-10) -> CurvatureProfile:
    """All fourteen a_i with first partials, plus (a, b, c), (D, E, F), (G, ...).

    The w-corner marker records whether (a, b, c) are defined at this point:
    they need k10 != 0; if the whole corner k7, k8, k9, k10 vanishes the
    connection sits in the [delta_t, delta_r]-only regime instead.
    """
    kj = conn.k_jets(t, r)
    k = {i: _J(kj[i - 1]) for i in range(1, 13)}
    kt = {i: _Dt(kj[i - 1]) for i in range(1, 13)}
    kr = {i: _Dr(kj[i - 1]) for i in range(1, 13)}

    a = {
        1: kr[1] - kt[2] + k[3] * k[4] - k[2] * k[6],
        2: kr[2] - kt[3] + k[2] * k[2] + k[3] * k[6] - k[1] * k[3] - k[2] * k[5],
        3: kr[4] - kt[6] + k[1] * k[6] + k[4] * k[5] - k[2] * k[4] - k[6] * k[6],
        4: kr[6] - kt[5] + k[2] * k[6] - k[3] * k[4],
        5: kr[8] - kt[9],
        6: -kt[7] + k[7] * k[8] - k[1] * k[7] - k[2] * k[10],
        7: -kt[10] + k[8] * k[10] - k[4] * k[7] - k[6] * k[10],
        8: -kt[8] + k[1] * k[8] + k[4] * k[9] - k[8] * k[8],
        9: -kt[9] + k[2] * k[8] + k[6] * k[9] - k[8] * k[9],
        10: -kr[7] + k[7] * k[9] - k[2] * k[7] - k[3] * k[10],
        11: -kr[10] + k[9] * k[10] - k[6] * k[7] - k[5] * k[10],
        12: -kr[8] + k[2] * k[8] + k[6] * k[9] - k[8] * k[9],
        13: -kr[9] + k[3] * k[8] + k[5] * k[9] - k[9] * k[9],
        14: Jet1(1.0) + k[7] * k[8] + k[9] * k[10],
    }

    kscale = 1.0 + max(abs(kj[i].value) for i in range(12))
    wvals = [abs(k[i].value) for i in (7, 8, 9, 10)]
    if max(wvals) <= corner_tol * kscale:
        corner = W_CORNER_ZERO
    elif abs(k[10].value) <= corner_tol * kscale:
        corner = W_CORNER_K10_DEGENERATE
    else:
        corner = W_CORNER_GENERIC

    abc = DEF = GH = None
    if corner == W_CORNER_GENERIC:
        aa = k[7] / k[10]
        bb = k[8] / k[10]
        cc = (k[9] * k[10] - k[7] * k[8]) / (k[10] * k[10])
        D = aa * a[3] - a[1] + a[5]
        E = bb * a[3]
        F = aa * a[3] - a[1]
        G = 2.0 * (k[1] - k[4] * aa)
        Gt = G - 2.0 * k[8]
        H = 2.0 * (k[2] - k[6] * aa)
        Ht = H - 2.0 * k[9]
        abc = (aa, bb, cc)
        DEF = (D, E, F)
        GH = (G, Gt, H, Ht)

    return CurvatureProfile(t=t, r=r, a=a, corner=corner, abc=abc, DEF=DEF,
                            GH=GH, k_jets=kj)


def ricci_asymmetry(cp: CurvatureProfile) -> float:
    """R_rt - R_tr = a1 + a4 + 2 a5; zero iff the connection Ricci is symmetric."""
    return cp.ricci_asymmetry()


# ---------------------------------------------------------------------------
# Christoffel table, spray, nonlinear connection
# ---------------------------------------------------------------------------

def christoffel_table(kvals: Sequence[float], theta: float) -> np.ndarray:
    """Gamma[e, c, d] at a point, including the explicit theta entries."""
    k = {i: kvals[i - 1] for i in range(1, 13)}
    s, c = math.sin(theta), math.cos(theta)
    if s == 0.0:
        raise GeometryError("chart breaks down at sin(theta) = 0")
    G = np.zeros((4, 4, 4))
    G[T, T, T] = k[1]
    G[T, T, R] = G[T, R, T] = k[2]
    G[T, R, R] = k[3]
    G[T, TH, TH] = k[7]
    G[T, PH, PH] = k[7] * s * s
    G[R, T, T] = k[4]
    G[R, T, R] = G[R, R, T] = k[6]
    G[R, R, R] = k[5]
    G[R, TH, TH] = k[10]
    G[R, PH, PH] = k[10] * s * s
    G[TH, T, TH] = G[TH, TH, T] = k[8]
    G[TH, R, TH] = G[TH, TH, R] = k[9]
    G[TH, PH, PH] = -s * c
    G[PH, T, PH] = G[PH, PH, T] = k[8]
    G[PH, R, PH] = G[PH, PH, R] = k[9]
    G[PH, TH, PH] = G[PH, PH, TH] = c / s
    if k[11] != 0.0 or k[12] != 0.0:
        G[TH, T, PH] = G[TH, PH, T] = -k[11] * s
        G[TH, R, PH] = G[TH, PH, R] = -k[12] * s
        G[PH, T, TH] = G[PH, TH, T] = k[11] / s
        G[PH, R, TH] = G[PH, TH, R] = k[12] / s
    return G


def spray_coefficients(conn: ConnectionProfile, p: TangentPoint) -> tuple:
    """G^a = (1/2) Gamma^a_bc xdot^b xdot^c (quadratic: Berwald by construction)."""
    kv = conn.k_values(p.t, p.r)
    Gam = christoffel_table(kv, p.theta)
    xd = p.velocity
    G = 0.5 * np.einsum("abc,b,c->a", Gam, xd, xd)
    return tuple(G)


def nonlinear_connection(conn: ConnectionProfile, p: TangentPoint) -> np.ndarray:
    """N^a_b = Gamma^a_bc xdot^c."""
    kv = conn.k_values(p.t, p.r)
    Gam = christoffel_table(kv, p.theta)
    return np.einsum("abc,c->ab", Gam, p.velocity)


# ---------------------------------------------------------------------------
# Bracket vectors
# ---------------------------------------------------------------------------

@dataclass
class BracketVector:
    label: tuple
    components: np.ndarray  # vertical components in the ddot basis


# R^e_ab component tables: per pair, per component e, a list of terms
# (coefficient index or signed pair, velocity index, carries sin^2 factor).
# Coefficient entries are (sign, i) meaning sign * a_i, or None for zero.
_R_TABLE = {
    (T, R): (((1, 1, T, False), (1, 2, R, False)),
             ((1, 3, T, False), (1, 4, R, False)),
             ((1, 5, TH, False),),
             ((1, 5, PH, False),)),
    (T, TH): (((1, 6, TH, False),),
              ((1, 7, TH, False),),
              ((1, 8, T, False), (1, 9, R, False)),
              ()),
    (T, PH): (((1, 6, PH, True),),
              ((1, 7, PH, True),),
              (),
              ((1, 8, T, False), (1, 9, R, False))),
    (R, TH): (((1, 10, TH, False),),
              ((1, 11, TH, False),),
              ((1, 12, T, False), (1, 13, R, False)),
              ()),
    (R, PH): (((1, 10, PH, True),),
              ((1, 11, PH, True),),
              (),
              ((1, 12, T, False), (1, 13, R, False))),
    (TH, PH): ((),
               (),
               ((-1, 14, PH, True),),
               ((1, 14, TH, False),)),
}

BRACKET_PAIRS = tuple(_R_TABLE.keys())


def _r_component_data(cp: CurvatureProfile, pair: tuple, p: TangentPoint):
    """Values, (t, r)-partials, theta-partial and velocity-gradient of R^e_ab."""
    s, c = math.sin(p.theta), math.cos(p.theta)
    s2 = s * s
    ds2 = 2.0 * s * c
    xd = p.velocity
    val = np.zeros(4)
    d_t = np.zeros(4)
    d_r = np.zeros(4)
    d_th = np.zeros(4)
    d_xd = np.zeros((4, 4))  # rows e, columns d: ddot_d R^e
    for e, terms in enumerate(_R_TABLE[pair]):
        for sign, i, vi, has_s2 in terms:
            aj = cp.a[i]
            fac = s2 if has_s2 else 1.0
            val[e] += sign * aj.value * xd[vi] * fac
            d_t[e] += sign * aj.dt * xd[vi] * fac
            d_r[e] += sign * aj.dr * xd[vi] * fac
            if has_s2:
                d_th[e] += sign * aj.value * xd[vi] * ds2
            d_xd[e, vi] += sign * aj.value * fac
    return val, d_t, d_r, d_th, d_xd


def bracket_vectors(conn: ConnectionProfile, p: TangentPoint, depth: int = 1,
                    cp: CurvatureProfile | None = None) -> list:
    """Vertical parts of [delta_a, delta_b] (depth 1) and of
    [delta_c, [delta_a, delta_b]] as well (depth 2).

    Valid for the classified family only (k11 = k12 = 0): the coefficient
    table encodes that case.
    """
    if depth not in (1, 2):
        raise ValueError("depth must be 1 or 2")
    if conn.has_angular_rotation():
        conn.require_classifiable([(p.t, p.r)])
    if cp is None or (cp.t, cp.r) != (p.t, p.r):
        cp = curvature_profile(conn, p.t, p.r)
    kv = np.array([j.value for j in cp.k_jets])
    Gam = christoffel_table(kv, p.theta)
    N = np.einsum("abc,c->ab", Gam, p.velocity)

    out = []
    data = {}
    for pair in BRACKET_PAIRS:
        val, d_t, d_r, d_th, d_xd = _r_component_data(cp, pair, p)
        data[pair] = (val, d_t, d_r, d_th, d_xd)
        out.append(BracketVector((COORD_NAMES[pair[0]], COORD_NAMES[pair[1]]), val))
    if depth == 1:
        return out

    for pair in BRACKET_PAIRS:
        val, d_t, d_r, d_th, d_xd = data[pair]
        dx = np.stack([d_t, d_r, d_th, np.zeros(4)])  # rows c: partial_c R^e
        for cidx in range(4):
            # delta_c R^e = partial_c R^e - N^d_c ddot_d R^e
            delta_c = dx[cidx] - d_xd @ N[:, cidx]
            comps = delta_c + Gam[:, cidx, :] @ val
            label = (COORD_NAMES[cidx], (COORD_NAMES[pair[0]], COORD_NAMES[pair[1]]))
            out.append(BracketVector(label, comps))
    return out


def bracket_matrix(conn: ConnectionProfile, p: TangentPoint, depth: int = 2,
                   cp: CurvatureProfile | None = None) -> np.ndarray:
    vecs = bracket_vectors(conn, p, depth, cp)
    return np.stack([v.components for v in vecs])


def numeric_rank(mat: np.ndarray, tol: float = 1e-8) -> int:
    if not np.any(mat):
        return 0
    sv = np.linalg.svd(mat, compute_uv=False)
    floor = tol * max(sv[0], 1.0)
    return int(np.sum(sv > floor))


def vertical_holonomy_rank(conn: ConnectionProfile, samples: Sequence[TangentPoint],
                           tol: float = 1e-8, min_samples: int = 20) -> int:
    """Max over samples of the rank of the stacked depth-2 bracket components.

    The algebraic cap of 3 holds for any Finsler-metrizable connection; the
    raw rank is available through `holonomy_rank_details`.
    """
    rank, _raw, _per = holonomy_rank_details(conn, samples, tol, min_samples)
    return rank


def holonomy_rank_details(conn: ConnectionProfile, samples: Sequence[TangentPoint],
                          tol: float = 1e-8, min_samples: int = 20):
    samples = list(samples)
    if len(samples) < min_samples:
        raise InsufficientSamples(
            "need at least %d admissible samples, got %d" % (min_samples, len(samples)))
    per = []
    cp_cache = {}
    for p in samples:
        key = (p.t, p.r)
        if key not in cp_cache:
            cp_cache[key] = curvature_profile(conn, p.t, p.r)
        mat = bracket_matrix(conn, p, 2, cp_cache[key])
        per.append(numeric_rank(mat, tol))
    raw = max(per)
    return min(raw, 3), raw, per


# ---------------------------------------------------------------------------
# Sample generation
# ---------------------------------------------------------------------------

def sample_tangent_points(rng: np.random.Generator, t_range: tuple, r_range: tuple,
                          n: int, predicate=None, max_tries: int = 20000) -> list:
    """Random admissible points: tdot > 0, sin(theta) in [0.2, 0.98],
    velocity components in [-2, 2]; an optional predicate filters further."""
    pts = []
    tries = 0
    while len(pts) < n:
        tries += 1
        if tries > max_tries:
            raise InsufficientSamples("predicate rejected too many samples")
        t = rng.uniform(*t_range)
        r = rng.uniform(*r_range)
        theta = math.asin(rng.uniform(0.2, 0.98))
        if rng.uniform() < 0.5:
            theta = math.pi - theta
        phi = rng.uniform(0.0, 2.0 * math.pi)
        tdot = rng.uniform(0.0, 2.0)
        rdot, thetadot, phidot = rng.uniform(-2.0, 2.0, size=3)
        if tdot <= 1e-6:
            continue
        p = TangentPoint(t, r, theta, phi, tdot, rdot, thetadot, phidot)
        if predicate is not None and not predicate(p):
            continue
        pts.append(p)
    return pts
