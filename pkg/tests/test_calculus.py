import numpy as np
import pytest

from folialab.calculus import (
    WeightedMeasure,
    a_y_operator,
    basic_laplacian,
    bundle_laplacian,
    check_divergence_theorem,
    codifferential,
    covariant_derivative,
    divergence,
    exterior_derivative,
    form_inner,
    integrate,
    pullback_derivative,
    rough_laplacian,
    second_covariant_derivative,
    twisted_codifferential,
    weitzenbock_check,
)
from folialab.manifold import build_model, build_target
from folialab.section import (
    NormalField,
    PullbackOneForm,
    PullbackSection,
    from_values,
    linear_map,
    random_field,
    random_map,
)
from folialab.tension import d_T, tension

from .conftest import observed_orders

RES = (16, 32, 64)


def _g_inner(m, a, b):
    return np.einsum("...ab,...a,...b->...", m.metric.g, a, b)


def _grad_pairing(m, V, W):
    nV, nW = covariant_derivative(V, m), covariant_derivative(W, m)
    return np.einsum("...ab,...cd,...ac,...bd->...", m.metric.g_inv, m.metric.g, nV, nW)


# --- integrate -------------------------------------------------------------


def test_integrate_examples(flat32, warped32):
    assert integrate(np.ones((32, 32)), flat32) == pytest.approx((2 * np.pi) ** 2, abs=1e-12)
    assert integrate(np.ones((32, 32)), WeightedMeasure(warped32, "full")) == pytest.approx(
        (2 * np.pi) ** 2, abs=1e-12)
    x1 = flat32.chart.coords[..., 0]
    assert integrate(np.cos(x1) ** 2, flat32) == pytest.approx(2 * np.pi ** 2, abs=1e-12)


def test_measure_total_and_mode():
    m = build_model("conformal-torus", {"eps": 0.2}, 32)
    mu = WeightedMeasure(m)
    assert np.all(mu.weights > 0)
    assert mu.total == pytest.approx(np.sum(m.metric.sqrt_det) * m.chart.cell_volume)
    with pytest.raises(ValueError):
        WeightedMeasure(m, "leafwise")


# --- covariant derivative ---------------------------------------------------


def test_covariant_derivative_constant_flat(flat32):
    Y = np.broadcast_to([0.4, -1.0], (32, 32, 2))
    assert np.max(np.abs(covariant_derivative(Y, flat32))) == 0.0


def test_covariant_derivative_sine_order2():
    errs = []
    for n in RES:
        m = build_model("product-flat-torus", {}, n)
        x1 = m.chart.coords[..., 0]
        Y = np.stack([np.sin(x1), np.zeros_like(x1)], -1)
        errs.append(np.max(np.abs(covariant_derivative(Y, m)[..., 0, 0] - np.cos(x1))))
    assert np.all(observed_orders(errs) > 1.9)


def test_covariant_derivative_metric_compatible():
    errs = []
    for n in (32, 64, 128):
        m = build_model("conformal-torus", {"eps": 0.2}, n)
        Y = random_field("normal", m, 3, 3).components
        # ∂_b⟨Y,Y⟩ from the exact band-limited field sampled on the grid
        yy = _g_inner(m, Y, Y)
        lhs = m.stencil.grad(yy)
        rhs = 2 * np.einsum("...ac,...bc,...a->...b", m.metric.g, covariant_derivative(Y, m), Y)
        errs.append(np.max(np.abs(lhs - rhs)))
    assert np.all(observed_orders(errs) > 1.8)


# --- pullback derivative ---------------------------------------------------


def test_pullback_derivative_flat_target_is_partials(flat32, flat_target):
    phi = random_map(flat32, flat_target, 0, 3, 0.2)
    V = random_field("pullback", flat32, 1, 3, base=phi)
    np.testing.assert_array_equal(pullback_derivative(V).components,
                                  flat32.stencil.grad(V.components))
    np.testing.assert_array_equal(pullback_derivative(V, 1).components,
                                  flat32.stencil.grad(V.components)[..., 1, :])


def test_pullback_derivative_sphere_analytic(sphere):
    # φ = a(sin x¹, sin x²), V = ∂₁φ; ∇^φ_a V = ∂_a∂₁φ + Γ'(φ)(∂_aφ, ∂₁φ)
    a = 0.4
    errs = []
    for n in RES:
        m = build_model("product-flat-torus", {}, n)
        x = m.chart.coords
        phi = from_values(m, sphere, a * np.sin(x))
        dphi = np.zeros(x.shape[:-1] + (2, 2))
        dphi[..., 0, 0] = a * np.cos(x[..., 0])
        dphi[..., 1, 1] = a * np.cos(x[..., 1])
        d2 = np.zeros(x.shape[:-1] + (2, 2))  # [a, k] = ∂_a∂_1φ^k
        d2[..., 0, 0] = -a * np.sin(x[..., 0])
        G = sphere.christoffel(phi.values)
        exact = d2 + np.einsum("...kij,...ai,...j->...ak", G, dphi, dphi[..., 0, :])
        V = PullbackSection(phi, dphi[..., 0, :])
        errs.append(np.max(np.abs(pullback_derivative(V).components - exact)))
    assert np.all(observed_orders(errs) > 1.9)


def test_pullback_derivative_product_rule(sphere):
    errs = []
    for n in (64, 128, 256):
        m = build_model("warped-torus", {"eps": 0.3}, n)
        phi = random_map(m, sphere, 2, 2, 0.3)
        V = random_field("pullback", m, 3, 2, base=phi)
        W = random_field("pullback", m, 4, 2, base=phi)
        gt = phi.metric_t
        lhs = m.stencil.grad(np.einsum("...kl,...k,...l->...", gt, V.components, W.components))
        nV, nW = pullback_derivative(V).components, pullback_derivative(W).components
        rhs = (np.einsum("...kl,...ak,...l->...a", gt, nV, W.components)
               + np.einsum("...kl,...k,...al->...a", gt, V.components, nW))
        errs.append(np.max(np.abs(lhs - rhs)))
    assert np.all(observed_orders(errs) > 1.8)


# --- rough Laplacian -------------------------------------------------------


def test_rough_laplacian_constant_flat(flat32):
    Y = NormalField(np.broadcast_to([1.0, 2.0], (32, 32, 2)))
    assert np.max(np.abs(rough_laplacian(Y, flat32).components)) == 0.0


@pytest.mark.parametrize("order", [2, 4, 6])
def test_rough_laplacian_eigenfield(order):
    errs = []
    for n in RES:
        m = build_model("product-flat-torus", {}, n, order)
        x1 = m.chart.coords[..., 0]
        Y = np.stack([np.sin(x1), np.zeros_like(x1)], -1)
        out = rough_laplacian(NormalField(Y), m).components
        errs.append(np.max(np.abs(out - Y)))
        # the discrete symbol of the compact stencil is exact for the mode
        assert np.max(np.abs(out[..., 1])) == 0.0
    assert np.all(observed_orders(errs) > order - 0.1)


@pytest.mark.parametrize("name,params", [("warped-torus", {"eps": 0.3}),
                                         ("conformal-torus", {"eps": 0.2})])
@pytest.mark.parametrize("order", [2, 6])
def test_rough_laplacian_adjoint_full_measure(name, params, order):
    # ∇_tr^*∇_tr is the adjoint of ∇ for the full measure; κ enters through vol_L
    errs = []
    for n in RES:
        m = build_model(name, params, n, order)
        V, W = random_field("normal", m, 1, 2), random_field("normal", m, 2, 2)
        mu = WeightedMeasure(m, "full")
        lhs = integrate(_g_inner(m, rough_laplacian(V, m).components, W.components), mu)
        errs.append(abs(lhs - integrate(_grad_pairing(m, V, W), mu)))
    assert np.all(observed_orders(errs) > order - 0.2)


def test_rough_laplacian_transversal_adjoint_is_trace_part():
    # in the transversal measure the adjoint of ∇ is -Σ∇²_{E_a,E_a} alone;
    # the ∇_{κ♯} term is exactly what the full-measure weight vol_L supplies
    trace_errs, kappa_gap = [], []
    for n in RES:
        m = build_model("warped-torus", {"eps": 0.3}, n, 6)
        V, W = random_field("normal", m, 1, 2), random_field("normal", m, 2, 2)
        tr = WeightedMeasure(m)
        rhs = integrate(_grad_pairing(m, V, W), tr)
        L0 = -np.einsum("...ab,...abd->...d", m.metric.g_inv, second_covariant_derivative(V, m))
        trace_errs.append(abs(integrate(_g_inner(m, L0, W.components), tr) - rhs))
        full = integrate(_g_inner(m, rough_laplacian(V, m).components, W.components), tr)
        kappa_gap.append(abs(full - rhs))
    assert np.all(observed_orders(trace_errs) > 5.8)
    assert min(kappa_gap) > 0.1


# --- divergence ------------------------------------------------------------


def test_divergence_theorem_flat(flat32):
    Y = random_field("normal", flat32, 7, 3)
    chk = check_divergence_theorem(Y, flat32)
    assert chk.residual < 1e-12
    assert abs(chk.lhs) < 1e-12 and chk.rhs == 0.0


@pytest.mark.parametrize("order", [2, 6])
def test_divergence_theorem_warped(order):
    res = []
    for n in RES:
        m = build_model("warped-torus", {"eps": 0.3}, n, order)
        res.append(check_divergence_theorem(random_field("normal", m, 7, 3), m).residual)
    if order == 6:
        assert res[-1] < 1e-6
    # the quadrature is spectral, so the rate is that of the divergence stencil
    assert np.all(observed_orders(res) > order - 0.1)


def test_divergence_theorem_kappa():
    m = build_model("warped-torus", {"eps": 0.3}, 64, 6)
    Y = NormalField(m.leaf.kappa_sharp)
    chk = check_divergence_theorem(Y, m)
    assert chk.residual < 1e-6
    kk = _g_inner(m, m.leaf.kappa_sharp, m.leaf.kappa_sharp)
    assert chk.rhs == pytest.approx(integrate(kk, WeightedMeasure(m, "full")), rel=1e-12)
    assert chk.rhs > 0.1


def test_divergence_flat_closed_form(flat32):
    x1 = flat32.chart.coords[..., 0]
    Y = np.stack([np.zeros_like(x1), np.sin(x1)], -1)
    assert np.max(np.abs(divergence(Y, flat32).values)) == 0.0


# --- A_Y -------------------------------------------------------------------


def test_a_y_parallel_is_zero(flat32):
    Y = np.broadcast_to([1.0, 0.5], (32, 32, 2))
    s = random_field("normal", flat32, 0, 2)
    assert np.max(np.abs(a_y_operator(Y, s, flat32).components)) == 0.0


def test_a_y_flat_sine():
    errs = []
    for n in RES:
        m = build_model("product-flat-torus", {}, n)
        x1 = m.chart.coords[..., 0]
        Y = np.stack([np.zeros_like(x1), np.sin(x1)], -1)
        e1 = np.broadcast_to([1.0, 0.0], Y.shape)
        out = a_y_operator(Y, e1, m).components
        assert np.max(np.abs(out[..., 0])) == 0.0
        errs.append(np.max(np.abs(out[..., 1] + np.cos(x1))))
    assert np.all(observed_orders(errs) > 1.9)


def test_a_y_linear_in_s(warped32):
    Y = random_field("normal", warped32, 1, 3)
    s1, s2 = random_field("normal", warped32, 2, 3), random_field("normal", warped32, 3, 3)
    both = a_y_operator(Y, s1.components + s2.components, warped32).components
    split = a_y_operator(Y, s1, warped32).components + a_y_operator(Y, s2, warped32).components
    np.testing.assert_allclose(both, split, rtol=0, atol=1e-14)


# --- basic Laplacian -------------------------------------------------------


def test_basic_laplacian_constant(warped32):
    assert np.max(np.abs(basic_laplacian(np.full((32, 32), 3.0), warped32).values)) == 0.0


@pytest.mark.parametrize("order", [2, 4, 6])
def test_basic_laplacian_cosine(order):
    errs = []
    for n in RES:
        m = build_model("product-flat-torus", {}, n, order)
        x1 = m.chart.coords[..., 0]
        errs.append(np.max(np.abs(basic_laplacian(np.cos(x1), m).values - np.cos(x1))))
    assert np.all(observed_orders(errs) > order - 0.1)


@pytest.mark.parametrize("name,params", [("warped-torus", {"eps": 0.3}),
                                         ("conformal-torus", {"eps": 0.2})])
def test_basic_laplacian_self_adjoint_full(name, params):
    m = build_model(name, params, 32)
    f = random_field("scalar", m, 1, 4).values
    g = random_field("scalar", m, 2, 4).values
    mu = WeightedMeasure(m, "full")
    gap = integrate(f * basic_laplacian(g, m).values, mu) - integrate(g * basic_laplacian(f, m).values, mu)
    assert abs(gap) < 1e-10
    assert integrate(f * basic_laplacian(f, m).values, mu) > 0


# --- bundle-valued exterior calculus --------------------------------------


@pytest.mark.parametrize("tname,tparams", [("sphere-stereo", {"C": 1.0}),
                                           ("hyperbolic-disk", {"C": -1.0}),
                                           ("conformal-torus", {"eps": 0.2})])
def test_d_nabla_of_d_T_vanishes(warped32, tname, tparams):
    t = build_target(tname, tparams)
    phi = random_map(warped32, t, 0, 3, 0.2)
    assert np.max(np.abs(exterior_derivative(d_T(phi)).components)) < 1e-12


def test_twisted_codifferential_is_minus_tension(warped32, sphere):
    phi = random_map(warped32, sphere, 1, 3, 0.3)
    tt = twisted_codifferential(d_T(phi)).components + tension(phi).components
    assert np.max(np.abs(tt)) <= 1e-10
    # δ_∇ keeps the interior product with κ♯
    full = codifferential(d_T(phi)).components
    ik = np.einsum("...a,...ak->...k", warped32.leaf.kappa_sharp, phi.dphi)
    np.testing.assert_allclose(full - ik, -tension(phi).components, atol=1e-12)


@pytest.mark.parametrize("degree", [0, 1])
def test_exterior_adjointness_converges(sphere, degree):
    errs = []
    for n in RES:
        m = build_model("warped-torus", {"eps": 0.3}, n)
        phi = random_map(m, sphere, 3, 2, 0.3)
        a = random_field("pullback", m, 4, 2, base=phi)
        mu = WeightedMeasure(m, "full")
        b = random_field("pullback", m, 5, 2, base=phi)
        if degree == 0:
            # a generic one-form, not d_Tφ (whose δ goes through the map Hessian)
            alpha = a
            beta = PullbackOneForm(phi, np.stack([b.components, a.components], -2))
        else:
            alpha = PullbackOneForm(phi, np.stack([a.components, b.components], -2))
            beta = exterior_derivative(PullbackOneForm(phi, np.stack([b.components, a.components], -2)))
        lhs = integrate(form_inner(exterior_derivative(alpha).components, beta.components, phi), mu)
        rhs = integrate(form_inner(alpha.components, codifferential(beta).components, phi), mu)
        errs.append(abs(lhs - rhs))
    assert np.all(observed_orders(errs) > 1.8)


def test_bundle_laplacian_degree_cap(flat32, flat_target):
    phi = linear_map(flat32, flat_target, np.eye(2))
    with pytest.raises(TypeError):
        bundle_laplacian(exterior_derivative(d_T(phi)))
    with pytest.raises(TypeError):
        exterior_derivative(exterior_derivative(d_T(phi)))


# --- Weitzenböck -----------------------------------------------------------


def test_weitzenbock_flat_linear(flat32, flat_target):
    rep = weitzenbock_check(d_T(linear_map(flat32, flat_target, [[2, 1], [1, 1]])))
    assert rep.residual < 1e-10
    assert rep.extra["operator_residual"] < 1e-10
    assert rep.identity == "weitzenbock" and rep.resolution == 32


def test_weitzenbock_flat_pair_closes_exactly(flat32, flat_target):
    # with κ = 0 and no curvature the operator identity holds for any Φ
    phi = random_map(flat32, flat_target, 2, 3, 0.3)
    rep = weitzenbock_check(d_T(phi))
    assert rep.extra["operator_residual"] < 1e-10


@pytest.mark.parametrize("src,tgt", [
    (("product-flat-torus", {}), ("sphere-stereo", {"C": 1.0})),
    (("warped-torus", {"eps": 0.3}), ("flat-torus", {})),
    (("warped-torus", {"eps": 0.3}), ("hyperbolic-disk", {"C": -1.0})),
    (("conformal-torus", {"eps": 0.2}), ("conformal-torus", {"eps": 0.2})),
])
@pytest.mark.parametrize("order,grids", [(2, (64, 128, 256)), (6, (32, 64, 128))])
def test_weitzenbock_converges(src, tgt, order, grids):
    # ½Δ_B|Φ|² carries fourth derivatives of φ, so the coarsest grids are
    # still pre-asymptotic; the grids here start where the rate has settled
    t = build_target(*tgt)
    res = []
    for n in grids:
        m = build_model(*src, n, order)
        res.append(weitzenbock_check(d_T(random_map(m, t, 1, 2, 0.2))).residual)
    assert np.all(observed_orders(res) > (1.8 if order == 2 else 4.0))


def test_residual_report_json(tmp_path, flat32, flat_target):
    rep = weitzenbock_check(d_T(linear_map(flat32, flat_target, np.eye(2))))
    p = tmp_path / "w.json"
    rep.to_json(p)
    import json
    d = json.loads(p.read_text())
    assert set(d) >= {"identity", "model", "target", "resolution", "residual", "order_estimate"}
