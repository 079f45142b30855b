"""Fields on a model foliation: basic functions, normal fields, foliated maps,
sections of the pullback bundle, and straight-line variation paths.

All arrays are node-major: leading axes are the grid, trailing axes are
components in chart frames.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from functools import cached_property
from itertools import product

import numpy as np

from .errors import ShapeError
from .manifold import ModelFoliation, TargetGeometry


def _check_finite(name, a):
    if not np.all(np.isfinite(a)):
        raise ShapeError(f"{name} has non-finite entries")


@dataclass(frozen=True, eq=False)
class BasicScalarField:
    values: np.ndarray

    def __post_init__(self):
        _check_finite("BasicScalarField", self.values)


@dataclass(frozen=True, eq=False)
class NormalField:
    """A section of Q in chart components, shape ``grid + (q,)``."""

    components: np.ndarray

    def __post_init__(self):
        _check_finite("NormalField", self.components)

    def __add__(self, other):
        return NormalField(self.components + other.components)


@dataclass(frozen=True, eq=False)
class FoliatedMapField:
    """A foliated map through its induced base map.

    ``values`` holds target chart coordinates at every source node. For
    periodic targets the values are a lift and ``winding`` is the integer
    matrix A with φ - A·x periodic; derivatives act on that periodic part.
    """

    model: ModelFoliation
    target: TargetGeometry
    values: np.ndarray
    winding: np.ndarray | None = None

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        grid = self.model.chart.dims
        if v.shape != grid + (self.target.dim,):
            raise ShapeError(f"map values have shape {v.shape}, expected {grid + (self.target.dim,)}")
        _check_finite("FoliatedMapField", v)
        object.__setattr__(self, "values", v)
        A = self.winding
        if A is not None:
            A = np.asarray(A, dtype=float)
            if A.shape != (self.target.dim, self.model.q):
                raise ShapeError(f"winding matrix must be {self.target.dim}x{self.model.q}")
            if not self.target.periodic and np.any(A):
                raise ShapeError("a winding matrix needs a periodic target")
            if np.any(A != np.round(A)):
                raise ShapeError("winding matrix must be integer")
            object.__setattr__(self, "winding", A)
        if not self.target.periodic:
            self.target.check_domain(v)

    @property
    def chart(self):
        return self.model.chart

    def with_values(self, values):
        return FoliatedMapField(self.model, self.target, values, self.winding)

    @cached_property
    def linear_part(self):
        if self.winding is None:
            return np.zeros_like(self.values)
        return np.einsum("ka,...a->...k", self.winding, self.model.chart.coords)

    @cached_property
    def periodic_part(self):
        return self.values - self.linear_part

    # jets ------------------------------------------------------------------
    @cached_property
    def dphi(self):
        """∂_aφ^k, shape ``grid + (q, q')``."""
        d = self.model.stencil.grad(self.periodic_part)
        if self.winding is not None:
            d = d + self.winding.T
        return d

    @cached_property
    def d2phi(self):
        """∂_a∂_bφ^k, compact stencil on the diagonal."""
        return self.model.stencil.hessian(self.periodic_part)

    @cached_property
    def metric_t(self):
        return self.target.metric(self.values)

    @cached_property
    def gamma_t(self):
        return self.target.christoffel(self.values)

    @cached_property
    def dgamma_t(self):
        return self.target.christoffel_grad(self.values)

    @cached_property
    def riemann_t(self):
        return self.target.riemann(self.values)

    @cached_property
    def nabla_riemann_t(self):
        return self.target.nabla_riemann(self.values)

    @cached_property
    def flat_pair(self) -> bool:
        """Flat source without κ_B and flat target: every curvature and Γ term vanishes."""
        return self.model.is_flat and not self.model.has_kappa and self.target.is_flat


@dataclass(frozen=True, eq=False)
class PullbackSection:
    """V ∈ φ^{-1}Q' in target chart components, shape ``grid + (q',)``."""

    base: FoliatedMapField
    components: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.components, dtype=float)
        if c.shape != self.base.values.shape:
            raise ShapeError(f"section shape {c.shape} does not match map {self.base.values.shape}")
        _check_finite("PullbackSection", c)
        object.__setattr__(self, "components", c)

    def __add__(self, other):
        return PullbackSection(self.base, self.components + other.components)

    def __sub__(self, other):
        return PullbackSection(self.base, self.components - other.components)

    def __mul__(self, c):
        return PullbackSection(self.base, c * self.components)

    __rmul__ = __mul__


@dataclass(frozen=True, eq=False)
class PullbackOneForm:
    """Element of Q* ⊗ φ^{-1}Q', shape ``grid + (q, q')``; index [a, k].

    ``potential`` optionally records that the form is exact: the base map
    itself (Φ = d_Tφ) or a PullbackSection V (Φ = ∇^φV). Operators then
    take second derivatives of the potential with the same stencils as
    the tension and Jacobi operators.
    """

    base: FoliatedMapField
    components: np.ndarray
    potential: object = None

    def __post_init__(self):
        c = np.asarray(self.components, dtype=float)
        expect = self.base.values.shape[:-1] + (self.base.model.q, self.base.target.dim)
        if c.shape != expect:
            raise ShapeError(f"one-form shape {c.shape}, expected {expect}")
        _check_finite("PullbackOneForm", c)
        object.__setattr__(self, "components", c)


@dataclass(frozen=True, eq=False)
class VariationPath:
    """Straight-line family φ_{t,s} = φ + tV + sW in target chart coordinates."""

    base: FoliatedMapField
    first: PullbackSection
    second: PullbackSection | None = None

    def __post_init__(self):
        for s in (self.first, self.second):
            if s is not None and s.base is not self.base:
                raise ShapeError("variation fields must be attached to the base map")

    def acceleration(self, which="VV"):
        """∇_V V (or ∇_W V) at (0,0): Γ'(φ)(V, V) by construction of the rule."""
        V = self.first.components
        W = V if which == "VV" else self.second.components
        return PullbackSection(self.base,
                               np.einsum("...kij,...i,...j->...k", self.base.gamma_t, V, W))


def eval_path(p: VariationPath, t: float, s: float = 0.0) -> FoliatedMapField:
    """φ_{t,s}; returns the base object itself at (0, 0)."""
    if t == 0 and s == 0:
        return p.base
    v = p.base.values + t * p.first.components
    if s != 0:
        if p.second is None:
            raise ValueError("path has no second direction")
        v = v + s * p.second.components
    return p.base.with_values(v)


# ---------------------------------------------------------------------------
# map constructors
# ---------------------------------------------------------------------------


def linear_map(model, target, A, offset=None) -> FoliatedMapField:
    """φ(x) = A·x + offset; A must be integer for periodic targets."""
    A = np.asarray(A, dtype=float)
    vals = np.einsum("ka,...a->...k", A, model.chart.coords)
    if offset is not None:
        vals = vals + np.asarray(offset, dtype=float)
    winding = A if target.periodic else None
    return FoliatedMapField(model, target, vals, winding)


def identity_map(model, target) -> FoliatedMapField:
    return linear_map(model, target, np.eye(target.dim, model.q))


def constant_map(model, target, u=None) -> FoliatedMapField:
    u = np.zeros(target.dim) if u is None else np.asarray(u, dtype=float)
    vals = np.broadcast_to(u, model.chart.dims + (target.dim,)).copy()
    return FoliatedMapField(model, target, vals,
                            np.zeros((target.dim, model.q)) if target.periodic else None)


def circle_map(model, target, radius=1.0, center=(0.0, 0.0)) -> FoliatedMapField:
    """u = center + radius·(cos x¹, sin x¹); a latitude circle in the sphere chart."""
    x = model.chart.coords[..., 0]
    vals = np.stack([np.cos(x), np.sin(x)], axis=-1) * radius + np.asarray(center)
    return FoliatedMapField(model, target, vals,
                            np.zeros((target.dim, model.q)) if target.periodic else None)


def from_values(model, target, values, winding=None) -> FoliatedMapField:
    return FoliatedMapField(model, target, np.asarray(values, dtype=float), winding)


def resample_map(phi: FoliatedMapField, model) -> FoliatedMapField:
    """Trigonometric interpolation of ``phi`` onto the grid of ``model``.

    The periodic part is resampled spectrally per axis; the winding part is
    re-evaluated exactly. Used to prolong a converged coarse flow result.
    """
    from scipy.signal import resample

    if model.chart.period != phi.model.chart.period or model.q != phi.model.q:
        raise ShapeError("resample_map needs charts of equal period and dimension")
    per = phi.periodic_part
    for ax, n in enumerate(model.chart.dims):
        if per.shape[ax] != n:
            per = resample(per, n, axis=ax)
    w = phi.winding
    lin = 0.0 if w is None else np.einsum("ka,...a->...k", w, model.chart.coords)
    return FoliatedMapField(model, phi.target, per + lin, w)


# ---------------------------------------------------------------------------
# random band-limited fields
# ---------------------------------------------------------------------------


def _half_lattice(q, bandlimit):
    """Wave vectors with |k|_∞ ≤ bandlimit, one of each ±k pair, k = 0 excluded."""
    ks = []
    for k in product(range(-bandlimit, bandlimit + 1), repeat=q):
        nz = [c for c in k if c != 0]
        if nz and nz[0] > 0:
            ks.append(k)
    return np.array(ks, dtype=float).reshape(-1, q)


def trig_field(coords, n_comp, seed, bandlimit, amplitude=1.0, decay=1.0):
    """Band-limited trigonometric polynomial sampled at ``coords``.

    Coefficients are amplitude·N(0,1)/(1+|k|²)^decay, drawn component by
    component over a fixed lattice ordering, so the same (seed, bandlimit)
    gives the same continuous field at every resolution. Zero mean.
    """
    q = coords.shape[-1]
    ks = _half_lattice(q, bandlimit)
    rng = np.random.default_rng(seed)
    coef = rng.standard_normal((n_comp, len(ks), 2))
    scale = amplitude / (1.0 + np.sum(ks**2, axis=1)) ** decay
    phase = np.tensordot(coords, ks.T, axes=1)  # grid + (nk,)
    c, s = np.cos(phase), np.sin(phase)
    out = np.empty(coords.shape[:-1] + (n_comp,))
    for j in range(n_comp):
        out[..., j] = c @ (coef[j, :, 0] * scale) + s @ (coef[j, :, 1] * scale)
    return out


def random_field(kind, model, seed, bandlimit, amplitude=1.0, base=None):
    """Seeded band-limited field of the requested kind.

    kind: ``scalar`` (BasicScalarField), ``normal`` (NormalField) or
    ``pullback`` (PullbackSection along ``base``).
    """
    if 2 * bandlimit >= min(model.chart.dims):
        raise ValueError(f"bandlimit {bandlimit} must be < resolution/2")
    if bandlimit < 1:
        raise ValueError("bandlimit must be >= 1")
    X = model.chart.coords
    if kind == "scalar":
        return BasicScalarField(trig_field(X, 1, seed, bandlimit, amplitude)[..., 0])
    if kind == "normal":
        return NormalField(trig_field(X, model.q, seed, bandlimit, amplitude))
    if kind == "pullback":
        if base is None:
            raise ValueError("pullback fields need a base map")
        return PullbackSection(base, trig_field(X, base.target.dim, seed, bandlimit, amplitude))
    raise ValueError(f"unknown field kind {kind!r}")


def random_map(model, target, seed, bandlimit, amplitude=0.1, base=None) -> FoliatedMapField:
    """Base map (default constant 0 or identity for periodic targets) plus a seeded perturbation."""
    if base is None:
        base = identity_map(model, target) if target.periodic else constant_map(model, target)
    pert = trig_field(model.chart.coords, target.dim, seed, bandlimit, amplitude)
    return base.with_values(base.values + pert)


# ---------------------------------------------------------------------------
# pointwise inner products
# ---------------------------------------------------------------------------


def inner_product_fields(a, b, model: ModelFoliation | None = None) -> BasicScalarField:
    """Nodewise inner product with g_Q (normal fields) or g'(φ(x)) (pullback fields).

    One-forms contract both indices with g_Q^{-1} and g'(φ).
    """
    if type(a) is not type(b):
        raise ShapeError(f"cannot pair {type(a).__name__} with {type(b).__name__}")
    if isinstance(a, PullbackSection):
        if a.components.shape != b.components.shape:
            raise ShapeError("shape mismatch")
        val = np.einsum("...kl,...k,...l->...", a.base.metric_t, a.components, b.components)
    elif isinstance(a, PullbackOneForm):
        if a.components.shape != b.components.shape:
            raise ShapeError("shape mismatch")
        gi = a.base.model.metric.g_inv
        val = np.einsum("...ab,...kl,...ak,...bl->...", gi, a.base.metric_t,
                        a.components, b.components)
    elif isinstance(a, NormalField):
        if model is None:
            raise ValueError("normal fields need the source model")
        if a.components.shape != b.components.shape:
            raise ShapeError("shape mismatch")
        val = np.einsum("...ab,...a,...b->...", model.metric.g, a.components, b.components)
    elif isinstance(a, BasicScalarField):
        if a.values.shape != b.values.shape:
            raise ShapeError("shape mismatch")
        val = a.values * b.values
    else:
        raise TypeError(f"unsupported field type {type(a).__name__}")
    return BasicScalarField(val)


# ---------------------------------------------------------------------------
# IO
# ---------------------------------------------------------------------------


def _components(field):
    if isinstance(field, BasicScalarField):
        return field.values[..., None]
    if isinstance(field, (NormalField, PullbackSection)):
        return field.components
    if isinstance(field, FoliatedMapField):
        return field.values
    if isinstance(field, PullbackOneForm):
        c = field.components
        return c.reshape(c.shape[:-2] + (-1,))
    raise TypeError(type(field).__name__)


def field_to_csv(field, model, path, meta=None):
    """Rows: node index, chart coordinates, components."""
    comps = _components(field)
    X = model.chart.coords.reshape(-1, model.q)
    C = comps.reshape(X.shape[0], -1)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        if meta:
            fh.write("# " + json.dumps(meta) + "\n")
        w.writerow(["node"] + [f"x{i + 1}" for i in range(model.q)]
                   + [f"c{j}" for j in range(C.shape[1])])
        for i in range(X.shape[0]):
            w.writerow([i] + [repr(float(v)) for v in X[i]] + [repr(float(v)) for v in C[i]])


def field_from_csv(path, model):
    """Read components written by ``field_to_csv``; returns an array ``grid + (ncomp,)``."""
    with open(path) as fh:
        rows = [r for r in csv.reader(line for line in fh if not line.startswith("#"))]
    data = np.array([[float(v) for v in r[1 + model.q:]] for r in rows[1:]])
    return data.reshape(model.chart.dims + (-1,))


def map_to_json(phi: FoliatedMapField, path=None, meta=None):
    d = {
        "schema": 1,
        "kind": "map",
        "target": phi.target.to_dict(),
        "dims": list(phi.model.chart.dims),
        "winding": None if phi.winding is None else phi.winding.tolist(),
        "values": phi.values.ravel().tolist(),
        "meta": meta or {},
    }
    if path is not None:
        with open(path, "w") as fh:
            json.dump(d, fh)
    return d


def map_from_json(src, model, target) -> FoliatedMapField:
    """Load a map dump (path or dict) onto ``model``; dims must match."""
    if not isinstance(src, dict):
        with open(src) as fh:
            src = json.load(fh)
    if tuple(src["dims"]) != model.chart.dims:
        raise ShapeError(f"map dump has dims {src['dims']}, model has {model.chart.dims}")
    vals = np.array(src["values"]).reshape(model.chart.dims + (target.dim,))
    return FoliatedMapField(model, target, vals, src.get("winding"))
