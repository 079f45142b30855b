"""Discretized model foliations (source side) and analytic target geometries.

A source foliation is represented purely by its transversal data on a
periodic base chart: the metric g_Q, its Levi-Civita connection and
curvature (both computed by central differences), and the leaf data
vol_L and kappa_B, which are analytic catalog inputs.

Index conventions used throughout the package:

* ``gamma[..., a, b, c]``  is Γ^a_{bc}
* ``riemann[..., a, b, c, d]`` is R^a_{bcd}, the component of R(∂_c, ∂_d)∂_b
* ``ricci[..., a, b]`` is the Ricci operator ρ^a_b = g^{ac} Ric_{cb}
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from ._stencil import ORDERS, Stencil
from .errors import CatalogError, ChartDomainError

TWO_PI = 2.0 * np.pi
MIN_NODES = 8


def _frozen(a):
    a = np.array(a, dtype=float)
    a.flags.writeable = False
    return a


# ---------------------------------------------------------------------------
# source side
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BaseChart:
    """Periodic structured grid on [0, period)^q."""

    dims: tuple
    period: float = TWO_PI

    def __post_init__(self):
        dims = tuple(int(n) for n in self.dims)
        object.__setattr__(self, "dims", dims)
        if not 1 <= len(dims) <= 3:
            raise CatalogError(f"codimension must be 1..3, got {len(dims)}")
        if min(dims) < MIN_NODES:
            raise CatalogError(f"every axis needs >= {MIN_NODES} nodes, got {dims}")

    @property
    def q(self) -> int:
        return len(self.dims)

    @property
    def spacing(self) -> tuple:
        return tuple(self.period / n for n in self.dims)

    @property
    def periodic(self) -> tuple:
        return (True,) * self.q

    @property
    def shape(self) -> tuple:
        return self.dims

    @property
    def n_nodes(self) -> int:
        return int(np.prod(self.dims))

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    @cached_property
    def axes(self) -> tuple:
        return tuple(np.arange(n) * h for n, h in zip(self.dims, self.spacing))

    @cached_property
    def coords(self) -> np.ndarray:
        """Chart coordinates of every node, shape ``dims + (q,)``."""
        grids = np.meshgrid(*self.axes, indexing="ij")
        return _frozen(np.stack(grids, axis=-1))


@dataclass(frozen=True)
class MetricField:
    g: np.ndarray
    g_inv: np.ndarray
    sqrt_det: np.ndarray

    @classmethod
    def from_components(cls, g):
        g = np.asarray(g, dtype=float)
        g_inv = np.linalg.inv(g)
        sqrt_det = np.sqrt(np.abs(np.linalg.det(g)))
        return cls(_frozen(g), _frozen(g_inv), _frozen(sqrt_det))


@dataclass(frozen=True)
class ConnectionField:
    gamma: np.ndarray


@dataclass(frozen=True)
class CurvatureField:
    riemann: np.ndarray
    ricci: np.ndarray
    ricci_lower: np.ndarray
    metric: MetricField = field(repr=False)

    def sectional(self, X, Y):
        """K(X, Y) = g(R(X,Y)Y, X) / (|X|²|Y|² - g(X,Y)²), nodewise."""
        g = self.metric.g
        X = np.broadcast_to(np.asarray(X, dtype=float), g.shape[:-1])
        Y = np.broadcast_to(np.asarray(Y, dtype=float), g.shape[:-1])
        RXYY = np.einsum("...abcd,...b,...c,...d->...a", self.riemann, Y, X, Y)
        num = np.einsum("...ab,...a,...b->...", g, RXYY, X)
        gxx = np.einsum("...ab,...a,...b->...", g, X, X)
        gyy = np.einsum("...ab,...a,...b->...", g, Y, Y)
        gxy = np.einsum("...ab,...a,...b->...", g, X, Y)
        return num / (gxx * gyy - gxy**2)

    @property
    def gaussian(self):
        """Sectional curvature of the coordinate plane (q = 2 only)."""
        if self.riemann.shape[-1] != 2:
            raise ValueError("gaussian curvature is defined for q = 2")
        g = self.metric.g
        r1212 = np.einsum("...a,...a->...", g[..., 0, :], self.riemann[..., :, 1, 0, 1])
        return r1212 / np.linalg.det(g)


@dataclass(frozen=True)
class LeafData:
    vol: np.ndarray
    kappa: np.ndarray
    kappa_sharp: np.ndarray


def christoffel(metric: MetricField, chart: BaseChart, order: int = 2) -> ConnectionField:
    """Γ^a_{bc} = ½ g^{ad}(∂_b g_{dc} + ∂_c g_{bd} - ∂_d g_{bc}) by central differences."""
    st = Stencil(order, chart.spacing)
    dg = st.grad(metric.g)  # [..., e, a, b] = ∂_e g_ab
    lowered = 0.5 * (
        np.einsum("...bdc->...dbc", dg)
        + np.einsum("...cbd->...dbc", dg)
        - dg
    )
    gamma = np.einsum("...ad,...dbc->...abc", metric.g_inv, lowered)
    return ConnectionField(_frozen(gamma))


def curvature(conn: ConnectionField, chart: BaseChart, metric: MetricField,
              order: int = 2) -> CurvatureField:
    """R^a_{bcd} = ∂_cΓ^a_{db} - ∂_dΓ^a_{cb} + Γ^a_{ce}Γ^e_{db} - Γ^a_{de}Γ^e_{cb}."""
    st = Stencil(order, chart.spacing)
    G = conn.gamma
    dG = st.grad(G)  # [..., e, a, b, c] = ∂_e Γ^a_bc
    # R = T - T with (c,d) swapped, so the antisymmetry holds bitwise
    T = np.einsum("...cadb->...abcd", dG) + np.einsum("...ace,...edb->...abcd", G, G)
    R = T - np.swapaxes(T, -1, -2)
    ric_lower = np.einsum("...abad->...bd", R)
    ric = np.einsum("...ac,...cb->...ab", metric.g_inv, ric_lower)
    return CurvatureField(_frozen(R), _frozen(ric), _frozen(ric_lower), metric)


@dataclass(frozen=True)
class ModelFoliation:
    """Transversal geometry of a source foliation on a periodic base chart."""

    name: str
    params: dict
    order: int
    chart: BaseChart
    metric: MetricField
    conn: ConnectionField
    curv: CurvatureField
    leaf: LeafData
    reference: dict = field(default_factory=dict, repr=False, compare=False)

    @classmethod
    def from_arrays(cls, chart, g, vol, kappa, order=2, name="custom", params=None,
                    reference=None):
        if order not in ORDERS:
            raise CatalogError(f"stencil order must be one of {ORDERS}")
        metric = MetricField.from_components(g)
        conn = christoffel(metric, chart, order)
        curv = curvature(conn, chart, metric, order)
        kappa = np.asarray(kappa, dtype=float)
        leaf = LeafData(
            _frozen(vol),
            _frozen(kappa),
            _frozen(np.einsum("...ab,...b->...a", metric.g_inv, kappa)),
        )
        return cls(name, dict(params or {}), order, chart, metric, conn, curv, leaf,
                   dict(reference or {}))

    @property
    def q(self) -> int:
        return self.chart.q

    @property
    def resolution(self) -> int:
        return self.chart.dims[0]

    @cached_property
    def stencil(self) -> Stencil:
        return Stencil(self.order, self.chart.spacing)

    @cached_property
    def is_flat(self) -> bool:
        """Metric exactly the identity at every node (so Γ = 0 and R = 0)."""
        return bool(np.array_equal(self.metric.g, np.broadcast_to(np.eye(self.q), self.metric.g.shape)))

    @cached_property
    def is_diagonal(self) -> bool:
        off = self.metric.g_inv * (1.0 - np.eye(self.q))
        return bool(not np.any(off))

    @cached_property
    def has_kappa(self) -> bool:
        return bool(np.any(self.leaf.kappa))

    def __hash__(self):
        return id(self)

    def __eq__(self, other):
        return self is other


def _catalog_fields(name, params, coords):
    """Analytic (g, vol_L, kappa_B, reference) for a catalog source model."""
    x = coords[..., 0]
    q = coords.shape[-1]
    shape = coords.shape[:-1]
    eye = np.broadcast_to(np.eye(q), shape + (q, q))
    ref = {}
    if name == "product-flat-torus":
        eps = params.get("eps", 0.0)
        if eps != 0.0:
            raise CatalogError("product-flat-torus takes eps = 0 only")
        g = eye.copy()
        vol = np.ones(shape)
        kappa = np.zeros(shape + (q,))
        ref["gaussian"] = np.zeros(shape)
        ref["christoffel"] = np.zeros(shape + (q, q, q))
    elif name == "warped-torus":
        eps = params.get("eps", 0.3)
        g = eye.copy()
        vol = 1.0 + eps * np.cos(x)
        kappa = np.zeros(shape + (q,))
        kappa[..., 0] = eps * np.sin(x) / vol
        ref["gaussian"] = np.zeros(shape)
        ref["christoffel"] = np.zeros(shape + (q, q, q))
    elif name == "conformal-torus":
        if q != 2:
            raise CatalogError("conformal-torus is two-dimensional")
        eps = params.get("eps", 0.2)
        warp = params.get("warp", 0.0)
        if abs(warp) >= 1.0:
            raise CatalogError(f"|warp| must be < 1, got {warp}")
        y = coords[..., 1]
        lam = 1.0 + eps * np.cos(x) * np.cos(y)
        lam_1 = -eps * np.sin(x) * np.cos(y)
        lam_2 = -eps * np.cos(x) * np.sin(y)
        lam_11 = -eps * np.cos(x) * np.cos(y)
        g = eye * (lam**2)[..., None, None]
        vol = 1.0 + warp * np.cos(y)
        kappa = np.zeros(shape + (q,))
        kappa[..., 1] = warp * np.sin(y) / vol
        # log-factor derivatives of the conformal factor
        l1, l2 = lam_1 / lam, lam_2 / lam
        lap_log = 2 * lam_11 / lam - (lam_1**2 + lam_2**2) / lam**2
        ref["gaussian"] = -lap_log / lam**2
        dl = np.stack([l1, l2], axis=-1)
        d = np.eye(2)
        ref["christoffel"] = (
            np.einsum("ki,...j->...kij", d, dl)
            + np.einsum("kj,...i->...kij", d, dl)
            - np.einsum("ij,...k->...kij", d, dl)
        )
    else:
        raise CatalogError(
            f"unknown source model {name!r}; expected one of {SOURCE_CATALOG}")
    if "eps" in params and abs(params["eps"]) >= 1.0:
        raise CatalogError(f"|eps| must be < 1, got {params['eps']}")
    return g, vol, kappa, ref


SOURCE_CATALOG = ("product-flat-torus", "warped-torus", "conformal-torus")


def build_model(name: str, params: dict | None = None, resolution=32,
                order: int = 2) -> ModelFoliation:
    """Instantiate a catalog source foliation on a periodic grid.

    ``resolution`` is nodes per axis (an int, or a tuple for anisotropic
    grids). ``order`` selects the central-difference order (2, 4 or 6).
    ``product-flat-torus`` also accepts ``q`` in params for codimension 1
    smoke tests.
    """
    params = dict(params or {})
    if "eps" in params and abs(params["eps"]) >= 1.0:
        raise CatalogError(f"|eps| must be < 1, got {params['eps']}")
    q = int(params.get("q", 2))
    if q != 2 and name != "product-flat-torus":
        raise CatalogError(f"{name} is only available with q = 2")
    if isinstance(resolution, (int, np.integer)):
        dims = (int(resolution),) * q
    else:
        dims = tuple(resolution)
    chart = BaseChart(dims)
    g, vol, kappa, ref = _catalog_fields(name, params, chart.coords)
    return ModelFoliation.from_arrays(chart, g, vol, kappa, order, name, params, ref)


# ---------------------------------------------------------------------------
# diagnostics
# ---------------------------------------------------------------------------


@dataclass
class Check:
    name: str
    residual: float
    tol: float
    hard: bool
    passed: bool
    detail: str = ""


@dataclass
class ValidationReport:
    model: str
    resolution: int
    checks: list

    @property
    def failures(self):
        return [c for c in self.checks if c.hard and not c.passed]

    @property
    def ok(self) -> bool:
        return not self.failures

    def __getitem__(self, name):
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def to_dict(self):
        return {
            "model": self.model,
            "resolution": self.resolution,
            "ok": self.ok,
            "checks": [vars(c) for c in self.checks],
        }


def _nodes(mask, limit=5):
    idx = [tuple(int(i) for i in n) for n in np.argwhere(mask)[:limit]]
    return ", ".join(str(n) for n in idx)


def validate_model(m: ModelFoliation, soft_tol: float = 1e-2) -> ValidationReport:
    """Residuals of every ModelFoliation invariant.

    Hard checks (SPD metric, positive vol_L, finite data) decide ``ok``;
    discretization-level checks are reported against ``soft_tol``.
    """
    checks = []
    q = m.q
    st = m.stencil
    g = m.metric.g

    def add(name, residual, tol, hard, detail=""):
        residual = float(residual)
        passed = bool(np.isfinite(residual) and residual <= tol)
        checks.append(Check(name, residual, tol, hard, passed, detail))

    finite = all(np.all(np.isfinite(a)) for a in (g, m.leaf.vol, m.leaf.kappa))
    add("finite", 0.0 if finite else np.inf, 0.0, True)

    add("metric_symmetric", np.max(np.abs(g - np.swapaxes(g, -1, -2))), 1e-14, True)
    eig_min = np.linalg.eigvalsh(0.5 * (g + np.swapaxes(g, -1, -2)))[..., 0]
    bad = eig_min <= 0
    add("metric_spd", max(0.0, -float(eig_min.min())), 0.0, True,
        f"non-SPD nodes: {_nodes(bad)}" if bad.any() else "")
    if bad.any():
        checks[-1].passed = False
    ident = np.einsum("...ab,...bc->...ac", m.metric.g_inv, g) - np.eye(q)
    add("inverse_identity", np.max(np.abs(ident)), 1e-12, True)
    add("sqrt_det_positive", 0.0 if np.all(m.metric.sqrt_det > 0) else np.inf, 0.0, True)

    G = m.conn.gamma
    add("torsion_free", np.max(np.abs(G - np.swapaxes(G, -1, -2))), 1e-12, False)
    dg = st.grad(g)
    nabla_g = (dg - np.einsum("...dca,...db->...cab", G, g)
               - np.einsum("...dcb,...ad->...cab", G, g))
    add("metric_compatibility", np.max(np.abs(nabla_g)), soft_tol, False)

    R = m.curv.riemann
    add("riemann_antisymmetry", np.max(np.abs(R + np.swapaxes(R, -1, -2))), 1e-12, False)
    bianchi = (R + np.einsum("...abcd->...adbc", R) + np.einsum("...abcd->...acdb", R))
    add("first_bianchi", np.max(np.abs(bianchi)), soft_tol, False)
    ric = np.einsum("...abad->...bd", R)
    add("ricci_contraction", np.max(np.abs(ric - m.curv.ricci_lower)), 1e-12, False)
    add("ricci_symmetry", np.max(np.abs(ric - np.swapaxes(ric, -1, -2))), soft_tol, False)

    vol = m.leaf.vol
    badv = vol <= 0
    add("vol_positive", max(0.0, -float(vol.min())), 0.0, True,
        f"non-positive vol_L nodes: {_nodes(badv)}" if badv.any() else "")
    if badv.any():
        checks[-1].passed = False
    dvol = st.grad(vol)
    add("leaf_volume_identity", np.max(np.abs(dvol + vol[..., None] * m.leaf.kappa)),
        soft_tol, False)
    if q >= 2:
        dk = st.grad(m.leaf.kappa)  # [..., a, b] = ∂_a κ_b
        add("kappa_closed", np.max(np.abs(dk - np.swapaxes(dk, -1, -2))), soft_tol, False)
    return ValidationReport(m.name, m.resolution, checks)


# ---------------------------------------------------------------------------
# target side
# ---------------------------------------------------------------------------


class TargetGeometry:
    """Analytic chart geometry of a target's normal bundle.

    All evaluators are vectorized over leading axes of ``u`` (shape
    ``(..., dim)``). Index layouts:

    * ``christoffel(u)[..., k, i, j]`` = Γ'^k_{ij}
    * ``christoffel_grad(u)[..., l, k, i, j]`` = ∂_l Γ'^k_{ij}
    * ``riemann(u)[..., a, b, c, d]`` = R'^a_{bcd}
    * ``nabla_riemann(u)[..., e, a, b, c, d]`` = (∇_e R')^a_{bcd}
    """

    name = "target"
    periodic = False
    period = TWO_PI
    is_flat = False

    def __init__(self, dim: int = 2, params: dict | None = None):
        self.dim = dim
        self.params = dict(params or {})

    # domain -----------------------------------------------------------------
    def contains(self, u):
        return np.ones(np.shape(u)[:-1], dtype=bool)

    def check_domain(self, u):
        ok = self.contains(u)
        if not np.all(ok):
            node = tuple(int(i) for i in np.argwhere(~ok)[0])
            r = float(np.linalg.norm(np.asarray(u)[node]))
            raise ChartDomainError(
                f"map value outside the {self.name} chart at node {node} (|u| = {r:.6g})",
                node=node, radius=r)

    def domain_margin(self, u) -> float:
        return np.inf

    # geometry ---------------------------------------------------------------
    def metric(self, u):
        raise NotImplementedError

    def christoffel(self, u):
        raise NotImplementedError

    def christoffel_grad(self, u):
        raise NotImplementedError

    def riemann(self, u):
        """Generic chart path: R from Γ' and its analytic derivatives."""
        G = self.christoffel(u)
        dG = self.christoffel_grad(u)
        T = np.einsum("...cadb->...abcd", dG) + np.einsum("...ace,...edb->...abcd", G, G)
        return T - np.swapaxes(T, -1, -2)

    def nabla_riemann(self, u):
        raise NotImplementedError

    def sectional(self, u):
        """Sectional curvature of the coordinate plane (dim 2)."""
        g = self.metric(u)
        R = self.riemann(u)
        r1212 = np.einsum("...a,...a->...", g[..., 0, :], R[..., :, 1, 0, 1])
        return r1212 / np.linalg.det(g)

    def to_dict(self):
        return {"name": self.name, "dim": self.dim, "params": self.params}

    def __repr__(self):
        return f"{type(self).__name__}({self.params})"


class ConformalTarget(TargetGeometry):
    """Two-dimensional target with metric e^{2f(u)} δ.

    Subclasses supply f and its derivatives up to the gradient of Δf.
    """

    constant_curvature = None

    def log_factor(self, u):
        """Return (f, ∂f, ∂∂f, ∂(Δf)) at u."""
        raise NotImplementedError

    def metric(self, u):
        f = self.log_factor(u)[0]
        return np.exp(2 * f)[..., None, None] * np.eye(self.dim)

    def christoffel(self, u):
        df = self.log_factor(u)[1]
        d = np.eye(self.dim)
        return (np.einsum("ki,...j->...kij", d, df)
                + np.einsum("kj,...i->...kij", d, df)
                - np.einsum("ij,...k->...kij", d, df))

    def christoffel_grad(self, u):
        hf = self.log_factor(u)[2]  # [..., i, j]
        d = np.eye(self.dim)
        return (np.einsum("ki,...jl->...lkij", d, hf)
                + np.einsum("kj,...il->...lkij", d, hf)
                - np.einsum("ij,...kl->...lkij", d, hf))

    def gaussian(self, u):
        """K = -e^{-2f} Δf, closed form."""
        f, _, hf, _ = self.log_factor(u)
        return -np.exp(-2 * f) * np.trace(hf, axis1=-2, axis2=-1)

    def gaussian_grad(self, u):
        f, df, hf, dlap = self.log_factor(u)
        lap = np.trace(hf, axis1=-2, axis2=-1)
        return np.exp(-2 * f)[..., None] * (2 * df * lap[..., None] - dlap)

    def curvature_form(self, u):
        """Unit-curvature tensor g_{db}δ^a_c - g_{cb}δ^a_d (R = K times this in 2D)."""
        g = self.metric(u)
        d = np.eye(self.dim)
        return (np.einsum("...db,ac->...abcd", g, d)
                - np.einsum("...cb,ad->...abcd", g, d))

    def nabla_riemann(self, u):
        if self.constant_curvature is not None:
            u = np.asarray(u, dtype=float)
            return np.zeros(u.shape[:-1] + (self.dim,) * 5)
        return self.nabla_riemann_generic(u)

    def nabla_riemann_generic(self, u):
        """dK ⊗ (unit form): in dimension two R = K·(unit form), which is parallel."""
        dK = self.gaussian_grad(u)
        return np.einsum("...e,...abcd->...eabcd", dK, self.curvature_form(u))


class FlatTorusTarget(TargetGeometry):
    name = "flat-torus"
    periodic = True
    is_flat = True

    def metric(self, u):
        u = np.asarray(u)
        return np.broadcast_to(np.eye(self.dim), u.shape[:-1] + (self.dim, self.dim)).copy()

    def _zeros(self, u, k):
        u = np.asarray(u)
        return np.zeros(u.shape[:-1] + (self.dim,) * k)

    def christoffel(self, u):
        return self._zeros(u, 3)

    def christoffel_grad(self, u):
        return self._zeros(u, 4)

    def riemann(self, u):
        return self._zeros(u, 4)

    def nabla_riemann(self, u):
        return self._zeros(u, 5)

    def sectional(self, u):
        return self._zeros(u, 0)


class SphereStereoTarget(ConformalTarget):
    """Round sphere of curvature C in one stereographic chart, μ = 2/(√C(1+|u|²))."""

    name = "sphere-stereo"

    def __init__(self, C=1.0, r_max=10.0):
        if not C > 0:
            raise CatalogError(f"sphere-stereo needs C > 0, got {C}")
        super().__init__(2, {"C": float(C), "r_max": float(r_max)})
        self.C = float(C)
        self.r_max = float(r_max)
        self.constant_curvature = self.C

    def contains(self, u):
        return np.linalg.norm(u, axis=-1) <= self.r_max

    def domain_margin(self, u):
        return float(self.r_max - np.linalg.norm(u, axis=-1).max())

    def log_factor(self, u):
        u = np.asarray(u, dtype=float)
        s = 1.0 + np.sum(u * u, axis=-1)
        f = np.log(2.0) - 0.5 * np.log(self.C) - np.log(s)
        df = -2.0 * u / s[..., None]
        hf = (-2.0 / s)[..., None, None] * np.eye(2) + 4.0 * np.einsum("...i,...j->...ij", u, u) / (s**2)[..., None, None]
        dlap = 16.0 * u / (s**3)[..., None]
        return f, df, hf, dlap


class HyperbolicDiskTarget(ConformalTarget):
    """Poincaré disk of curvature -|C|, μ = 2/(√|C|(1-|u|²)) on |u| < 1."""

    name = "hyperbolic-disk"

    def __init__(self, C=-1.0, r_max=0.999):
        if not C < 0 or not np.isfinite(C):
            raise CatalogError(f"hyperbolic-disk needs C < 0, got {C}")
        super().__init__(2, {"C": -abs(float(C)), "r_max": float(r_max)})
        self.C = -abs(float(C))
        self.r_max = float(r_max)
        self.constant_curvature = self.C

    def contains(self, u):
        return np.linalg.norm(u, axis=-1) < self.r_max

    def domain_margin(self, u):
        return float(self.r_max - np.linalg.norm(u, axis=-1).max())

    def log_factor(self, u):
        u = np.asarray(u, dtype=float)
        s = 1.0 - np.sum(u * u, axis=-1)
        f = np.log(2.0) - 0.5 * np.log(-self.C) - np.log(s)
        df = 2.0 * u / s[..., None]
        hf = (2.0 / s)[..., None, None] * np.eye(2) + 4.0 * np.einsum("...i,...j->...ij", u, u) / (s**2)[..., None, None]
        dlap = 16.0 * u / (s**3)[..., None]
        return f, df, hf, dlap


class ConformalTorusTarget(ConformalTarget):
    """Flat torus rescaled by λ(u) = 1 + ε cos u¹ cos u²; non-constant curvature."""

    name = "conformal-torus"
    periodic = True

    def __init__(self, eps=0.2):
        if abs(eps) >= 1:
            raise CatalogError(f"|eps| must be < 1, got {eps}")
        super().__init__(2, {"eps": float(eps)})
        self.eps = float(eps)

    def log_factor(self, u):
        u = np.asarray(u, dtype=float)
        e = self.eps
        c1, c2 = np.cos(u[..., 0]), np.cos(u[..., 1])
        s1, s2 = np.sin(u[..., 0]), np.sin(u[..., 1])
        lam = 1.0 + e * c1 * c2
        # derivatives of λ up to third order
        l1, l2 = -e * s1 * c2, -e * c1 * s2
        l11 = l22 = -e * c1 * c2
        l12 = e * s1 * s2
        l111, l112, l122, l222 = e * s1 * c2, e * c1 * s2, e * s1 * c2, e * c1 * s2
        f = np.log(lam)
        df = np.stack([l1, l2], axis=-1) / lam[..., None]
        h11 = l11 / lam - l1 * l1 / lam**2
        h22 = l22 / lam - l2 * l2 / lam**2
        h12 = l12 / lam - l1 * l2 / lam**2
        hf = np.stack([np.stack([h11, h12], -1), np.stack([h12, h22], -1)], -2)

        # ∂_k (f_11 + f_22) with f_ii = λ_ii/λ - λ_i²/λ²
        def d_fii(lii_k, li, lik, lk, lii):
            return lii_k / lam - lii * lk / lam**2 - 2 * li * lik / lam**2 + 2 * li**2 * lk / lam**3

        dlap1 = d_fii(l111, l1, l11, l1, l11) + d_fii(l122, l2, l12, l1, l22)
        dlap2 = d_fii(l112, l1, l12, l2, l11) + d_fii(l222, l2, l22, l2, l22)
        return f, df, hf, np.stack([dlap1, dlap2], axis=-1)


TARGET_CATALOG = ("flat-torus", "sphere-stereo", "hyperbolic-disk", "conformal-torus")


def build_target(name: str, params: dict | None = None) -> TargetGeometry:
    """Instantiate a catalog target geometry."""
    params = dict(params or {})
    if name == "flat-torus":
        return FlatTorusTarget(int(params.get("dim", 2)), {"dim": int(params.get("dim", 2))})
    if name == "sphere-stereo":
        return SphereStereoTarget(params.get("C", 1.0), params.get("r_max", 10.0))
    if name == "hyperbolic-disk":
        return HyperbolicDiskTarget(params.get("C", -1.0), params.get("r_max", 0.999))
    if name == "conformal-torus":
        return ConformalTorusTarget(params.get("eps", 0.2))
    raise CatalogError(f"unknown target {name!r}; expected one of {TARGET_CATALOG}")


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------


def model_to_dict(m: ModelFoliation) -> dict:
    """Self-describing node-major grid dump of a model."""
    header = {
        "schema": 1,
        "kind": "model",
        "name": m.name,
        "params": m.params,
        "order": m.order,
        "dims": list(m.chart.dims),
        "period": m.chart.period,
        "spacing": list(m.chart.spacing),
        "axis_order": [f"x{i + 1}" for i in range(m.q)],
        "layout": "node-major, C order; trailing axes are tensor indices",
    }
    fields = {
        "g": m.metric.g,
        "vol_L": m.leaf.vol,
        "kappa_B": m.leaf.kappa,
        "gamma": m.conn.gamma,
        "riemann": m.curv.riemann,
    }
    return {
        "header": header,
        "fields": {k: {"shape": list(v.shape), "data": v.ravel().tolist()}
                   for k, v in fields.items()},
    }


def dump_model(m: ModelFoliation, path) -> None:
    """Write a model as JSON (``.json``) or numpy archive (``.npz``)."""
    path = str(path)
    d = model_to_dict(m)
    if path.endswith(".npz"):
        arrays = {k: np.array(v["data"]).reshape(v["shape"]) for k, v in d["fields"].items()}
        np.savez(path, header=json.dumps(d["header"]), **arrays)
    else:
        with open(path, "w") as fh:
            json.dump(d, fh)


def load_model(path) -> ModelFoliation:
    """Rebuild a model from a dump (metric and leaf data; Γ and R recomputed)."""
    path = str(path)
    if path.endswith(".npz"):
        with np.load(path) as z:
            header = json.loads(str(z["header"]))
            g, vol, kappa = z["g"], z["vol_L"], z["kappa_B"]
    else:
        with open(path) as fh:
            d = json.load(fh)
        header = d["header"]
        f = d["fields"]

        def arr(k):
            return np.array(f[k]["data"]).reshape(f[k]["shape"])

        g, vol, kappa = arr("g"), arr("vol_L"), arr("kappa_B")
    chart = BaseChart(tuple(header["dims"]), header["period"])
    return ModelFoliation.from_arrays(chart, g, vol, kappa, header["order"],
                                      header["name"], header["params"])
