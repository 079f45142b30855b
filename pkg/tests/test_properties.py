"""Property tests for the invariants the operators must satisfy on any input."""

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from folialab.calculus import (
    WeightedMeasure,
    basic_laplacian,
    exterior_derivative,
    integrate,
    twisted_codifferential,
)
from folialab.manifold import build_model, build_target
from folialab.section import (
    PullbackSection,
    VariationPath,
    constant_map,
    eval_path,
    inner_product_fields,
    linear_map,
    random_field,
    random_map,
)
from folialab.tension import (
    curvature_action,
    curvature_action_constant,
    d_T,
    jacobi_apply,
    riemann_apply,
    stress_energy,
    tension,
)
from folialab.variational import energy, richardson

PROFILE = settings(max_examples=25, deadline=None)

seeds = st.integers(0, 2**32 - 1)
eps = st.floats(-0.4, 0.4)
ints = st.integers(-3, 3)
coef = st.floats(-2.0, 2.0)

_MODELS = {}


def _model(name, e, res=16, order=2):
    key = (name, round(e, 6), res, order)
    if key not in _MODELS:
        params = {} if name == "product-flat-torus" else {"eps": round(e, 6)}
        _MODELS[key] = build_model(name, params, res, order)
    return _MODELS[key]


sources = st.sampled_from(["product-flat-torus", "warped-torus", "conformal-torus"])
targets = st.sampled_from([("sphere-stereo", {"C": 1.0}), ("sphere-stereo", {"C": 0.25}),
                           ("hyperbolic-disk", {"C": -1.0}), ("conformal-torus", {"eps": 0.2})])


@PROFILE
@given(st.lists(ints, min_size=4, max_size=4))
def test_linear_torus_maps_are_harmonic(a):
    m = _model("product-flat-torus", 0.0)
    A = np.array(a).reshape(2, 2)
    phi = linear_map(m, build_target("flat-torus"), A)
    assert np.max(np.abs(tension(phi).components)) < 1e-11
    # closed-form energy ½‖A‖²_F (2π)²
    assert abs(energy(phi) - 2 * np.pi ** 2 * np.sum(A ** 2)) < 1e-10 * max(1, np.sum(A ** 2))


@PROFILE
@given(sources, eps, targets, seeds, coef, coef)
def test_inner_product_bilinear_symmetric(src, e, tgt, seed, a, b):
    m = _model(src, e)
    phi = random_map(m, build_target(*tgt), seed, 2, 0.1)
    U, V, W = (random_field("pullback", m, seed + i, 2, base=phi) for i in (1, 2, 3))
    uv = inner_product_fields(U, V).values
    np.testing.assert_allclose(uv, inner_product_fields(V, U).values, rtol=1e-14, atol=1e-14)
    lin = PullbackSection(phi, a * U.components + b * W.components)
    np.testing.assert_allclose(inner_product_fields(lin, V).values,
                               a * uv + b * inner_product_fields(W, V).values, rtol=1e-12, atol=1e-12)
    assert np.all(inner_product_fields(U, U).values >= 0)


@PROFILE
@given(sources, eps, seeds)
def test_basic_laplacian_self_adjoint(src, e, seed):
    m = _model(src, e)
    f = random_field("scalar", m, seed, 4).values
    g = random_field("scalar", m, seed + 1, 4).values
    mu = WeightedMeasure(m, "full")
    gap = integrate(f * basic_laplacian(g, m).values, mu) - integrate(g * basic_laplacian(f, m).values, mu)
    assert abs(gap) < 1e-10
    assert integrate(f * basic_laplacian(f, m).values, mu) >= -1e-12


@PROFILE
@given(sources, eps, targets, seeds)
def test_realization_identities(src, e, tgt, seed):
    m = _model(src, e)
    phi = random_map(m, build_target(*tgt), seed, 3, 0.1)
    dphi = d_T(phi)
    assert np.max(np.abs(twisted_codifferential(dphi).components + tension(phi).components)) <= 1e-10
    assert np.max(np.abs(exterior_derivative(dphi).components)) <= 1e-10
    S = stress_energy(phi)
    assert np.max(np.abs(S - np.swapaxes(S, -1, -2))) <= 1e-14


@PROFILE
@given(sources, eps, targets, seeds)
def test_energy_nonnegative(src, e, tgt, seed):
    m = _model(src, e)
    t = build_target(*tgt)
    assert energy(random_map(m, t, seed, 3, 0.1)) >= 0.0
    assert energy(constant_map(m, t)) == 0.0


@PROFILE
@given(st.sampled_from([0.25, 1.0, 4.0, -0.5, -1.0]), seeds)
def test_curvature_action_constant_matches_generic(C, seed):
    m = _model("warped-torus", 0.3)
    t = build_target("sphere-stereo", {"C": C}) if C > 0 else build_target("hyperbolic-disk", {"C": C})
    phi = random_map(m, t, seed, 2, 0.2)
    V = random_field("pullback", m, seed + 1, 2, base=phi)
    d = curvature_action(phi, V).components - curvature_action_constant(phi, V, C).components
    assert np.max(np.abs(d)) < 1e-10


@PROFILE
@given(targets, seeds)
def test_target_curvature_antisymmetric(tgt, seed):
    m = _model("product-flat-torus", 0.0, 8)
    phi = random_map(m, build_target(*tgt), seed, 2, 0.1)
    rng = np.random.default_rng(seed)
    X, Y, Z = (rng.standard_normal(phi.values.shape) for _ in range(3))
    assert np.max(np.abs(riemann_apply(phi, X, Y, Z) + riemann_apply(phi, Y, X, Z))) < 1e-12


@PROFILE
@given(sources, eps, targets, seeds, coef, coef)
def test_jacobi_linear(src, e, tgt, seed, a, b):
    m = _model(src, e)
    phi = random_map(m, build_target(*tgt), seed, 2, 0.1)
    V, W = (random_field("pullback", m, seed + i, 2, base=phi) for i in (1, 2))
    lhs = jacobi_apply(phi, a * V.components + b * W.components).components
    rhs = a * jacobi_apply(phi, V).components + b * jacobi_apply(phi, W).components
    assert np.max(np.abs(lhs - rhs)) <= 1e-11 * max(1.0, np.max(np.abs(rhs)))


@PROFILE
@given(sources, eps)
def test_connection_symmetric_and_curvature_antisymmetric(src, e):
    m = _model(src, e)
    G = m.conn.gamma
    assert np.array_equal(G, np.swapaxes(G, -1, -2))
    R = m.curv.riemann
    assert np.array_equal(R, -np.swapaxes(R, -1, -2))


@PROFILE
@given(sources, eps, seeds, st.integers(1, 6))
def test_random_fields_zero_mean_and_deterministic(src, e, seed, bl):
    m = _model(src, e)
    a = random_field("normal", m, seed, bl).components
    assert np.max(np.abs(a.mean(axis=(0, 1)))) < 1e-14
    assert np.array_equal(a, random_field("normal", m, seed, bl).components)


@PROFILE
@given(coef, coef, coef)
def test_richardson_exact_on_even_polynomials(c0, c2, c4):
    steps = (1e-2, 5e-3, 2.5e-3)
    vals = [c0 + c2 * t ** 2 + c4 * t ** 4 for t in steps]
    assert abs(richardson(steps, vals) - c0) < 1e-12


@PROFILE
@given(targets, seeds, st.floats(-0.5, 0.5), st.floats(-0.5, 0.5))
def test_eval_path_is_affine(tgt, seed, t, s):
    m = _model("product-flat-torus", 0.0, 8)
    phi = random_map(m, build_target(*tgt), seed, 2, 0.1)
    V, W = (random_field("pullback", m, seed + i, 2, 0.1, base=phi) for i in (1, 2))
    out = eval_path(VariationPath(phi, V, W), t, s).values
    np.testing.assert_allclose(out, phi.values + t * V.components + s * W.components, atol=1e-15)
