"""Energy and bi-energy functionals, finite-difference variation oracles,
transversal Hessians, sparse Jacobi assembly and stability spectra.

All functionals integrate in the transversal measure √g dx, which equals
∫_M (·)(1/vol_L) μ_M on the model.
"""

from __future__ import annotations

import json
import time
import warnings
from dataclasses import asdict, dataclass, field
from functools import cached_property

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .calculus import integrate, pullback_derivative
from .section import FoliatedMapField, PullbackSection, VariationPath, eval_path
from .tension import (
    curvature_action,
    energy_density,
    jacobi_apply,
    bitension,
    riemann_apply,
    tension,
)

DEFAULT_STEPS = (1e-2, 5e-3, 2.5e-3)
DENSE_CAP = 8192


def _inner_t(phi, a, b):
    """Nodewise g'(φ)(a, b)."""
    a = a.components if isinstance(a, PullbackSection) else a
    b = b.components if isinstance(b, PullbackSection) else b
    if phi.target.is_flat:
        return np.einsum("...k,...k->...", a, b)
    return np.einsum("...kl,...k,...l->...", phi.metric_t, a, b)


def energy(phi: FoliatedMapField, m=None) -> float:
    """E_B = ½∫|d_Tφ|², transversal measure."""
    return 0.5 * integrate(energy_density(phi), phi.model)


def bienergy(phi: FoliatedMapField, m=None) -> float:
    """(E₂)_B = ½∫|τ_b(φ)|², transversal measure."""
    tau = tension(phi)
    return 0.5 * integrate(_inner_t(phi, tau, tau), phi.model)


FUNCTIONALS = {"energy": energy, "bienergy": bienergy}


def _functional(name):
    if callable(name):
        return name
    try:
        return FUNCTIONALS[name]
    except KeyError:
        raise ValueError(f"unknown functional {name!r}; expected 'energy' or 'bienergy'") from None


# ---------------------------------------------------------------------------
# Richardson extrapolation
# ---------------------------------------------------------------------------


def richardson(steps, values, powers=(2, 4)):
    """Extrapolate D(t) = D0 + Σ c_p t^p to t = 0 using as many powers as the data allow."""
    steps = np.asarray(steps, dtype=float)
    values = np.asarray(values, dtype=float)
    n = len(steps)
    if n < 2:
        raise ValueError("Richardson extrapolation needs >= 2 steps")
    pw = list(powers)[: n - 1]
    A = np.column_stack([np.ones(n)] + [steps**p for p in pw])
    coef = np.linalg.lstsq(A, values, rcond=None)[0]
    return float(coef[0])


def richardson_weights(steps, powers=(2, 4)):
    """Weights w with richardson(steps, v) == w @ v."""
    steps = np.asarray(steps, dtype=float)
    n = len(steps)
    pw = list(powers)[: n - 1]
    A = np.column_stack([np.ones(n)] + [steps**p for p in pw])
    return np.linalg.pinv(A)[0]


FD_REL_ERR = 10 * np.finfo(float).eps  # relative rounding error of one functional value


def fd_floor(steps, fscale, n_eval, derivative, rel=FD_REL_ERR):
    """Rounding-error scale of a Richardson-extrapolated difference quotient.

    Each of the ``n_eval`` stencil values carries a relative error ``rel``;
    the combination is divided by t (first derivative) or t² (second).
    """
    steps = np.asarray(steps, dtype=float)
    w = richardson_weights(steps)
    per_step = n_eval * rel * abs(fscale) / steps**derivative
    return float(np.sum(np.abs(w) * per_step))


def step_order(steps, values):
    """Observed order in t from the last three schedule values (None if undetermined)."""
    if len(values) < 3:
        return None
    d1 = abs(values[-3] - values[-2])
    d2 = abs(values[-2] - values[-1])
    if d1 == 0 or d2 == 0:
        return None
    return float(np.log(d1 / d2) / np.log(steps[-3] / steps[-2]))


@dataclass
class VariationReport:
    functional: str
    kind: str
    steps: list
    fd_values: list
    fd: float
    formula: float
    residual: float
    t_order: float | None
    resolution: int
    model: str
    target: str
    terms: dict = field(default_factory=dict)
    seed: int | None = None
    seconds: float = 0.0
    note: str = ""
    fd_floor: float = 0.0  # worst-case rounding error of the extrapolated FD value

    @property
    def at_roundoff(self) -> bool:
        return self.residual <= self.fd_floor

    def to_dict(self):
        return asdict(self)

    def to_json(self, path=None):
        s = json.dumps(self.to_dict(), indent=2)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(s)
        return s


# ---------------------------------------------------------------------------
# first variation
# ---------------------------------------------------------------------------


def first_variation_formula(phi, V, functional="energy") -> float:
    """-∫⟨V, τ_b⟩ (energy) or -∫⟨V, (τ₂)_b⟩ (bi-energy)."""
    name = functional if isinstance(functional, str) else functional.__name__
    grad = tension(phi) if name == "energy" else bitension(phi)
    return -integrate(_inner_t(phi, V, grad), phi.model)


def fd_first_variation(path: VariationPath, functional="energy", steps=DEFAULT_STEPS,
                       seed=None) -> VariationReport:
    """Central differences of the functional along the path, Richardson-extrapolated."""
    if len(steps) < 2:
        raise ValueError("step schedule must have >= 2 steps")
    t0 = time.perf_counter()
    F = _functional(functional)
    name = functional if isinstance(functional, str) else F.__name__
    fv = [(F(eval_path(path, t)), F(eval_path(path, -t))) for t in steps]
    vals = [(a - b) / (2 * t) for (a, b), t in zip(fv, steps)]
    fd = richardson(steps, vals)
    formula = first_variation_formula(path.base, path.first, name)
    m = path.base.model
    floor = fd_floor(steps, max(abs(x) for pair in fv for x in pair), 1.0, 1)
    return VariationReport(name, "first", list(steps), vals, fd, formula, abs(fd - formula),
                           step_order(steps, vals), m.resolution, m.name, path.base.target.name,
                           seed=seed, seconds=time.perf_counter() - t0, fd_floor=floor)


# ---------------------------------------------------------------------------
# second variation: energy
# ---------------------------------------------------------------------------


def hessian_formula_terms(phi, V, W):
    """Terms of ∫⟨∇V,∇W⟩ - ⟨tr R'(V,d_Tφ)d_Tφ, W⟩, plus the term -∫⟨Γ'(V,W), τ_b⟩
    that the straight-line rule adds when φ is not harmonic."""
    m = phi.model
    nV = pullback_derivative(V).components
    nW = pullback_derivative(W).components
    gi = m.metric.g_inv
    if phi.target.is_flat:
        dirichlet = integrate(np.einsum("...ab,...ak,...bk->...", gi, nV, nW), m)
        curv = 0.0
        accel = 0.0
    else:
        dirichlet = integrate(np.einsum("...ab,...kl,...ak,...bl->...", gi, phi.metric_t, nV, nW), m)
        curv = -integrate(_inner_t(phi, curvature_action(phi, V), W), m)
        GVW = np.einsum("...kij,...i,...j->...k", phi.gamma_t, V.components, W.components)
        accel = -integrate(_inner_t(phi, GVW, tension(phi)), m)
    return {"dirichlet": dirichlet, "curvature": curv, "acceleration": accel}


def _mixed_fd(F, path, t, seen):
    f = [F(eval_path(path, a, b)) for a, b in ((t, t), (t, -t), (-t, t), (-t, -t))]
    seen.extend(f)
    return (f[0] - f[1] - f[2] + f[3]) / (4 * t * t)


def _second_fd(F, path, t, f0, seen):
    f = [F(eval_path(path, t)), F(eval_path(path, -t))]
    seen.extend(f)
    return (f[0] - 2 * f0 + f[1]) / (t * t)


def fd_second_variation(path: VariationPath, functional="energy", steps=DEFAULT_STEPS,
                        seed=None) -> VariationReport:
    """∂²/∂t∂s of the functional at (0,0) against the closed-form Hessian.

    Without a second direction the pure second derivative along V is used.
    For the energy the compared value includes the acceleration term
    -∫⟨Γ'(V,W), τ_b⟩, which vanishes at harmonic maps; the classical
    value (without it) is kept in ``terms``.
    """
    if len(steps) < 2:
        raise ValueError("step schedule must have >= 2 steps")
    t0 = time.perf_counter()
    F = _functional(functional)
    name = functional if isinstance(functional, str) else F.__name__
    phi = path.base
    V = path.first
    W = path.second if path.second is not None else V
    seen = []
    if path.second is not None:
        vals = [_mixed_fd(F, path, t, seen) for t in steps]
        floor = fd_floor(steps, max(map(abs, seen)), 1.0, 2)
    else:
        f0 = F(phi)
        vals = [_second_fd(F, path, t, f0, seen) for t in steps]
        floor = fd_floor(steps, max(map(abs, seen + [f0])), 4.0, 2)
    fd = richardson(steps, vals)
    note = ""
    if name == "energy":
        terms = hessian_formula_terms(phi, V, W)
        terms["classical"] = terms["dirichlet"] + terms["curvature"]
        formula = terms["classical"] + terms["acceleration"]
        tau_inf = float(np.max(np.abs(tension(phi).components)))
        if tau_inf > 1e-8:
            note = "base map not harmonic: classical value is a formula extension"
    else:
        if path.second is None:
            br = bienergy_hessian(phi, V)
            terms, formula = br.terms, br.total
        else:
            # polarization of the quadratic form along straight lines
            plus = bienergy_hessian(phi, V + W)
            minus = bienergy_hessian(phi, V - W)
            formula = 0.25 * (plus.total - minus.total)
            terms = {k: 0.25 * (plus.terms[k] - minus.terms[k]) for k in plus.terms}
    m = phi.model
    return VariationReport(name, "second", list(steps), vals, fd, formula, abs(fd - formula),
                           step_order(steps, vals), m.resolution, m.name, phi.target.name,
                           terms=terms, seed=seed, seconds=time.perf_counter() - t0, note=note,
                           fd_floor=floor)


# ---------------------------------------------------------------------------
# transversal Hessian, two realizations
# ---------------------------------------------------------------------------


@dataclass
class ThessResult:
    formula: float
    operator: float
    difference: float
    tension_inf: float
    harmonic: bool


def thess(phi: FoliatedMapField, V: PullbackSection, W: PullbackSection, m=None,
          tol: float = 1e-6) -> ThessResult:
    """THess_φ(V,W) from the gradient form and from ∫⟨J^T_φ V, W⟩; warns off harmonic maps."""
    t = hessian_formula_terms(phi, V, W)
    formula = t["dirichlet"] + t["curvature"]
    operator = integrate(_inner_t(phi, jacobi_apply(phi, V), W), phi.model)
    tau_inf = float(np.max(np.abs(tension(phi).components)))
    if tau_inf > tol:
        warnings.warn(f"THess evaluated at a non-harmonic map (|tau|_inf = {tau_inf:.3g})",
                      stacklevel=2)
    return ThessResult(formula, operator, abs(formula - operator), tau_inf, tau_inf <= tol)


# ---------------------------------------------------------------------------
# bi-energy second variation
# ---------------------------------------------------------------------------


@dataclass
class BienergyHessian:
    terms: dict
    total: float
    closed_form_const_curvature: float | None = None


def bienergy_hessian(phi: FoliatedMapField, V: PullbackSection, m=None) -> BienergyHessian:
    """Second derivative of (E₂)_B along φ + tV, term by term.

    jacobi_sq        ∫|J^T_φ V|²
    acceleration     -∫⟨(τ₂)_b, ∇_V V⟩ with ∇_V V = Γ'(V,V)
    curvature_tau    -∫⟨R'(V,τ_b)τ_b, V⟩
    nabla_R_dphi     -2∫g^{ab}⟨(∇_{∂_aφ}R')(V,∂_bφ)τ_b, V⟩
    nabla_R_tau      ∫g^{ab}⟨(∇_{τ_b}R')(V,∂_aφ)∂_bφ, V⟩
    mixed            -4∫g^{ab}⟨R'(∇_aV, τ_b)∂_bφ, V⟩

    The first term replaces |(τ₂)_b|²; the two agree only for V = τ_b.
    """
    mm = phi.model
    Vc = V.components
    tau = tension(phi).components
    JV = jacobi_apply(phi, V).components
    T = {"jacobi_sq": integrate(_inner_t(phi, JV, JV), mm)}
    if phi.target.is_flat:
        for k in ("acceleration", "curvature_tau", "nabla_R_dphi", "nabla_R_tau", "mixed"):
            T[k] = 0.0
        return BienergyHessian(T, T["jacobi_sq"], None)
    gi = mm.metric.g_inv
    dphi = phi.dphi
    R = phi.riemann_t
    dR = phi.nabla_riemann_t  # [..., e, a, b, c, d]
    GVV = np.einsum("...kij,...i,...j->...k", phi.gamma_t, Vc, Vc)
    T["acceleration"] = -integrate(_inner_t(phi, bitension(phi), GVV), mm)
    T["curvature_tau"] = -integrate(_inner_t(phi, riemann_apply(phi, Vc, tau, tau), Vc), mm)
    # (∇_X R)(Y, Z)W components: dR[e,k,j,i,l] X^e Y^i Z^l W^j
    nr1 = np.einsum("...ab,...ae,...ekjil,...i,...bl,...j->...k", gi, dphi, dR, Vc, dphi, tau)
    T["nabla_R_dphi"] = -2.0 * integrate(_inner_t(phi, nr1, Vc), mm)
    nr2 = np.einsum("...ab,...e,...ekjil,...i,...al,...bj->...k", gi, tau, dR, Vc, dphi, dphi)
    T["nabla_R_tau"] = integrate(_inner_t(phi, nr2, Vc), mm)
    nV = pullback_derivative(V).components
    mix = np.einsum("...ab,...kjil,...bj,...ai,...l->...k", gi, R, dphi, nV, tau)
    T["mixed"] = -4.0 * integrate(_inner_t(phi, mix, Vc), mm)
    total = float(sum(T.values()))
    cc = None
    C = getattr(phi.target, "constant_curvature", None)
    if C is not None:
        cc = -4.0 * C * integrate(_inner_t(phi, tau, tau) ** 2, mm)
    return BienergyHessian(T, total, cc)


# ---------------------------------------------------------------------------
# assembly and spectra
# ---------------------------------------------------------------------------


def _probe_period(N, r):
    for P in range(2 * r + 1, N + 1):
        if N % P == 0:
            return P
    return N


def assemble_operator(phi: FoliatedMapField, apply=None):
    """Sparse matrix of V ↦ apply(φ, V) on the nodal basis, by colored probing.

    Unknowns are ordered node-major with the target component fastest.
    The footprint of the operators here is the stencil radius per axis, so
    nodes whose indices agree modulo a period P ≥ 2r+1 never interact.
    """
    apply = jacobi_apply if apply is None else apply
    m = phi.model
    dims = m.chart.dims
    qp = phi.target.dim
    r = m.stencil.radius
    periods = [_probe_period(N, r) for N in dims]
    idx = np.indices(dims)
    rows, cols, vals = [], [], []
    node_id = np.arange(int(np.prod(dims))).reshape(dims)
    for color in np.ndindex(*periods):
        mask = np.ones(dims, dtype=bool)
        for ax, c in enumerate(color):
            mask &= (idx[ax] % periods[ax]) == c
        # source node owning each output node for this color
        src = []
        ok = np.ones(dims, dtype=bool)
        for ax, c in enumerate(color):
            P, N = periods[ax], dims[ax]
            off = (c - idx[ax]) % P
            off = np.where(off > P // 2, off - P, off)
            ok &= np.abs(off) <= r if P < N else True
            src.append((idx[ax] + off) % N)
        src_id = node_id[tuple(src)]
        for k in range(qp):
            e = np.zeros(dims + (qp,))
            e[mask, k] = 1.0
            out = apply(phi, PullbackSection(phi, e)).components
            for kk in range(qp):
                col = out[..., kk]
                sel = ok & (col != 0.0)
                rows.append(node_id[sel] * qp + kk)
                cols.append(src_id[sel] * qp + k)
                vals.append(col[sel])
    n = int(np.prod(dims)) * qp
    A = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(n, n))
    return A


@dataclass(eq=False)
class HessianAssembly:
    """Jacobi operator J on the nodal basis and the weighted form M = B·J.

    B is block diagonal with blocks w_x·g'(φ(x)), the transversal-measure
    inner product; M is the matrix of ⟨J e_i, e_j⟩. Eigenvalues are those
    of the generalized problem ½(M+Mᵀ)v = λBv, i.e. eigenvalues of J.
    """

    phi: FoliatedMapField
    A: sp.csr_matrix
    B: sp.csr_matrix
    matvec_check: float
    seconds: float

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @cached_property
    def M(self):
        return (self.B @ self.A).tocsr()

    @cached_property
    def M_sym(self):
        return (0.5 * (self.M + self.M.T)).tocsr()

    @cached_property
    def symmetry_residual(self) -> float:
        """max|M - Mᵀ| relative to max|M|."""
        D = self.M - self.M.T
        mx = abs(self.M).max()
        return float(abs(D).max() / mx) if mx > 0 else 0.0

    def eigen(self, k: int | None = None, iterative: bool | None = None, vectors=False):
        """Lowest k eigenvalues (all if k is None), ascending."""
        if iterative is None:
            iterative = self.n > DENSE_CAP
        if not iterative:
            if self.n > DENSE_CAP:
                raise ValueError(f"n = {self.n} exceeds the dense cap {DENSE_CAP}; enable the iterative solver")
            Md = self.M_sym.toarray()
            Bd = self.B.toarray()
            sub = None if k is None else (0, min(k, self.n) - 1)
            if vectors:
                w, v = sla.eigh(Md, Bd, subset_by_index=sub)
                return w, v
            return sla.eigh(Md, Bd, eigvals_only=True, subset_by_index=sub)
        if k is None:
            raise ValueError("the iterative solver needs k")
        sigma = self.gershgorin_bounds[0] - 1.0
        try:
            w, v = spla.eigsh(self.M_sym.tocsc(), k=k, M=self.B.tocsc(), sigma=sigma,
                              which="LM", tol=1e-12)
        except spla.ArpackNoConvergence as exc:
            raise RuntimeError("iterative eigensolver did not converge") from exc
        order = np.argsort(w, kind="stable")
        w, v = w[order], v[:, order]
        # residual of the symmetrized generalized problem actually solved
        Bv = self.B @ v
        res = np.linalg.norm(self.M_sym @ v - Bv * w, axis=0) / np.linalg.norm(Bv, axis=0)
        if np.any(res > 1e-8 * max(1.0, np.abs(w).max())):
            warnings.warn(f"eigenpair residual {res.max():.2e} above contract", stacklevel=2)
        return (w, v) if vectors else w

    @cached_property
    def gershgorin_bounds(self):
        """Bounds on the spectrum of B^{-1/2} M_sym B^{-1/2}."""
        d = 1.0 / np.sqrt(self.B.diagonal())
        # B may carry off-diagonal target-metric blocks; use its diagonal scale as a proxy
        S = sp.diags(d) @ self.M_sym @ sp.diags(d)
        diag = S.diagonal()
        rad = np.asarray(abs(S).sum(axis=1)).ravel() - np.abs(diag)
        return float((diag - rad).min()), float((diag + rad).max())

    def to_csv(self, path, k=None):
        w = self.eigen(k)
        with open(path, "w") as fh:
            fh.write("index,eigenvalue\n")
            for i, lam in enumerate(w):
                fh.write(f"{i},{lam!r}\n")


def _weight_matrix(phi):
    m = phi.model
    w = m.metric.sqrt_det * m.chart.cell_volume
    qp = phi.target.dim
    blocks = w[..., None, None] * phi.metric_t
    n_nodes = m.chart.n_nodes
    return sp.block_diag(list(blocks.reshape(n_nodes, qp, qp)), format="csr")


def assemble_jacobi(phi: FoliatedMapField, m=None, seed: int = 0) -> HessianAssembly:
    """Assemble J^T_φ and the transversal-measure Hessian form; verify by a random matvec."""
    t0 = time.perf_counter()
    A = assemble_operator(phi)
    B = _weight_matrix(phi)
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(phi.values.shape)
    ref = jacobi_apply(phi, PullbackSection(phi, v)).components.ravel()
    err = float(np.max(np.abs(A @ v.ravel() - ref)) / max(1.0, np.max(np.abs(ref))))
    return HessianAssembly(phi, A, B, err, time.perf_counter() - t0)


@dataclass
class StabilityReport:
    eigenvalues: list
    lam_min: float
    lam_max_estimate: float
    tol_spec: float
    stable: bool
    kernel_dim: int
    symmetry_residual: float
    n: int

    def to_dict(self):
        return asdict(self)


def stability_report(assembly: HessianAssembly, k: int = 8, iterative: bool | None = None,
                     ) -> StabilityReport:
    """Lowest k eigenvalues and the verdict λ_min ≥ -tol_spec, tol_spec = 1e-6(1+|λ_max|)."""
    if iterative is None:
        iterative = assembly.n > DENSE_CAP
    if iterative:
        w = assembly.eigen(k, iterative=True)
        lam_max = assembly.gershgorin_bounds[1]
    else:
        full = assembly.eigen(None, iterative=False)
        w = full[:k]
        lam_max = float(full[-1])
    tol = 1e-6 * (1.0 + abs(lam_max))
    return StabilityReport([float(x) for x in w], float(w[0]), float(lam_max), tol,
                           bool(w[0] >= -tol), int(np.sum(np.abs(w) <= tol)),
                           assembly.symmetry_residual, assembly.n)
