import numpy as np
import pytest

from prq.errors import ConditioningError, ValidationError
from prq.harness import example1
from prq.mdp import FeatureSet, random_features, random_mdp
from prq.projection import (
    WeightDistribution,
    build_projector,
    contraction_report,
    convexity_constants,
    gram,
    inf_norm,
    projection_matrix,
    weight_from_mode,
)

from instances import well_conditioned


def _random_instance(rng, bounded=True):
    nS, nA = rng.integers(1, 4, size=2)
    n = nS * nA
    h = int(rng.integers(1, n + 1))
    mdp = random_mdp(rng, nS, nA, rng.uniform(0.1, 0.999))
    feats = random_features(rng, n, h, bounded=bounded)
    d = WeightDistribution(rng.dirichlet(np.ones(n)) * 0.9 + 0.1 / n)
    return mdp, feats, d


def test_weights_validate():
    with pytest.raises(ValidationError):
        WeightDistribution(np.array([0.5, 0.6]))
    with pytest.raises(ValidationError):
        WeightDistribution(np.array([1.5, -0.5]))
    assert np.allclose(WeightDistribution.uniform(4).d, 0.25)
    with pytest.raises(ValidationError):
        weight_from_mode("stationary", 4, None)


def test_identity_projection():
    mdp = example1.mdp()
    p = build_projector(FeatureSet.identity(4), WeightDistribution.uniform(4), 0.0, mdp)
    np.testing.assert_allclose(p.gamma_eta, np.eye(4), atol=1e-14)
    assert p.inf_norm == pytest.approx(1.0, abs=1e-14)


def test_large_eta_kills_projection():
    mdp = example1.mdp()
    p = build_projector(FeatureSet.identity(4), WeightDistribution.uniform(4), 1e9, mdp)
    assert p.inf_norm < 1e-6
    rep = contraction_report(p, mdp)
    assert rep.contracts and rep.gamma_p_norm < 1e-6


def test_example_projection_two_paths(ex1):
    f, d = ex1["features"], ex1["d"]
    chol = build_projector(f, d, 0.01, ex1["mdp"]).gamma_eta
    lu = projection_matrix(f, d, 0.01, method="lu")
    # independent: solve (Phi^T D Phi + eta I) X = Phi^T D by plain inversion
    M = f.phi.T @ np.diag(d.d) @ f.phi + 0.01 * np.eye(2)
    direct = f.phi @ np.linalg.inv(M) @ f.phi.T @ np.diag(d.d)
    np.testing.assert_allclose(chol, lu, atol=1e-10, rtol=0)
    np.testing.assert_allclose(chol, direct, atol=1e-10, rtol=0)


def test_algebraic_identities(rng):
    for _ in range(50):
        mdp, f, d = _random_instance(rng)
        eta = rng.uniform(0, 3)
        p = build_projector(f, d, eta, mdp)
        G = gram(f, d)
        rhs = f.phi @ np.linalg.solve(G + eta * np.eye(f.h), G)
        np.testing.assert_allclose(p.gamma_eta @ f.phi, rhs, atol=1e-10)
        p0 = build_projector(f, d, 0.0, mdp)
        np.testing.assert_allclose(p0.gamma_eta @ p0.gamma_eta, p0.gamma_eta, atol=1e-10)
        np.testing.assert_allclose(p.core_inverse @ (G + eta * np.eye(f.h)), np.eye(f.h), atol=1e-9)


def test_singular_gram_names_eta():
    mdp = example1.mdp()
    f = FeatureSet(np.array([[1.0, 0.0], [0.0, 0.0], [0.0, 0.0], [0.0, 0.0]]))
    with pytest.raises(ConditioningError, match="eta=0.0"):
        build_projector(f, WeightDistribution.uniform(4), 0.0, mdp)
    # regularisation repairs it
    build_projector(f, WeightDistribution.uniform(4), 0.5, mdp)


def test_limit_monotone_and_small_eta(rng):
    for _ in range(20):
        mdp, f, d = well_conditioned(rng)
        norms = [build_projector(f, d, eta, mdp).inf_norm for eta in (1e2, 1e4, 1e6, 1e8)]
        assert all(a > b for a, b in zip(norms, norms[1:]))
        g0 = build_projector(f, d, 0.0, mdp).gamma_eta
        g_small = build_projector(f, d, 1e-9, mdp).gamma_eta
        assert inf_norm(g_small - g0) <= 1e-5


def test_small_eta_gap_formula(rng):
    """Gamma_eta - Gamma_0 = -eta Phi (G + eta I)^-1 G^-1 Phi^T D, so the gap is O(eta / lambda_min)."""
    for _ in range(30):
        mdp, f, d = well_conditioned(rng)
        G = gram(f, d)
        eta = 10.0 ** rng.uniform(-6, 0)
        gap = build_projector(f, d, eta, mdp).gamma_eta - build_projector(f, d, 0.0, mdp).gamma_eta
        formula = -eta * f.phi @ np.linalg.solve(G + eta * np.eye(f.h), np.linalg.solve(G, f.phi.T * d.d))
        np.testing.assert_allclose(gap, formula, atol=1e-10)


def test_contraction_remark(rng):
    for _ in range(100):
        nS, nA = rng.integers(1, 4, size=2)
        mdp = random_mdp(rng, nS, nA, 0.999)
        f = random_features(rng, nS * nA, int(rng.integers(1, nS * nA + 1)))
        assert f.inf_norm <= 1.0 + 1e-15
        d = WeightDistribution(rng.dirichlet(np.ones(nS * nA)))
        assert contraction_report(build_projector(f, d, 2.001, mdp), mdp).contracts


def test_contraction_report_gamma_mismatch(ex1):
    p = build_projector(ex1["features"], ex1["d"], 0.01, ex1["mdp"])
    with pytest.raises(ValidationError):
        contraction_report(p, ex1["mdp"].with_gamma(0.9))


def test_example_report_on_gamma_grid(ex1):
    for g in (0.9, 0.95, 0.99):
        mdp = ex1["mdp"].with_gamma(g)
        rep = contraction_report(build_projector(ex1["features"], ex1["d"], 0.0, mdp), mdp)
        assert rep.gamma_norm > 0 and rep.gamma_p_norm > 0
        assert rep.contracts == (rep.gamma_p_norm < 1)


def test_convexity_constants_examples(ex1):
    cc = convexity_constants(FeatureSet.identity(6), WeightDistribution.uniform(6), 0.0)
    assert cc.mu_eta == pytest.approx(1 / 6, abs=1e-15) and cc.l_eta == pytest.approx(1 / 6, abs=1e-15)
    assert cc.kappa == pytest.approx(1.0)
    f, d = ex1["features"], ex1["d"]
    base = convexity_constants(f, d, 0.0)
    shifted = convexity_constants(f, d, 5.0)
    assert shifted.mu_eta - base.mu_eta == pytest.approx(5.0, abs=1e-12)
    assert shifted.l_eta - base.l_eta == pytest.approx(5.0, abs=1e-12)
    # closed-form 2x2 eigenvalues: roots of x^2 - tr x + det
    G = f.phi.T @ np.diag(d.d) @ f.phi + 0.01 * np.eye(2)
    tr, det = np.trace(G), np.linalg.det(G)
    disc = np.sqrt(tr * tr / 4 - det)
    cc = convexity_constants(f, d, 0.01)
    assert cc.mu_eta == pytest.approx(tr / 2 - disc, rel=1e-10)
    assert cc.l_eta == pytest.approx(tr / 2 + disc, rel=1e-10)


def test_hessian_spectrum_bracketed(rng):
    for _ in range(50):
        mdp, f, d = _random_instance(rng)
        eta = rng.uniform(0, 2)
        cc = convexity_constants(f, d, eta)
        ev = np.linalg.eigvalsh(gram(f, d) + eta * np.eye(f.h))
        assert ev.min() == pytest.approx(cc.mu_eta, rel=1e-12, abs=1e-15)
        assert ev.max() == pytest.approx(cc.l_eta, rel=1e-12, abs=1e-15)
        assert cc.kappa >= 1.0
