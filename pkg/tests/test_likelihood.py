"""Log-likelihood against a dense multivariate-normal oracle."""

import numpy as np
import pytest

from windfuse.core import vectorize
from windfuse.likelihood import (block_loglik_cond, block_loglik_nwp,
                                 numerical_gradient, per_block_logliks,
                                 total_loglik)
from windfuse.model import (build_lambda, cov_marginal, mean_cond_vector,
                            mean_nwp_vector)
from windfuse.params import ModelStructure, ThetaCodec
from windfuse.synth import make_test_geometry, random_theta, simulate_panel


def oracle_mvn_logpdf(y, mean, cov):
    """Independent route: slogdet + explicit solve (no Cholesky)."""
    d = y.size
    sign, logdet = np.linalg.slogdet(cov)
    assert sign > 0
    r = y - mean
    return -0.5 * (d * np.log(2 * np.pi) + logdet
                   + r @ np.linalg.solve(cov, r))


def _setup(seed=0, j=2, n=3, h=4):
    geom = make_test_geometry(j, n, h=h, seed=seed)
    theta = random_theta(geom, seed=seed + 1)
    return geom, theta


def test_marginal_term_matches_dense_oracle():
    geom, theta = _setup(seed=1)
    obs, nwp = simulate_panel(theta, geom, 3, seed=2)
    y = vectorize(nwp.values[0])
    want = oracle_mvn_logpdf(y, mean_nwp_vector(theta, geom),
                             cov_marginal(theta, geom, "nwp").values)
    assert block_loglik_nwp(theta, geom, nwp.values[0]) == pytest.approx(
        want, rel=1e-10)


def test_conditional_term_matches_dense_oracle():
    geom, theta = _setup(seed=3)
    obs, nwp = simulate_panel(theta, geom, 3, seed=4)
    yo, yn = vectorize(obs.values[1]), vectorize(nwp.values[1])
    T = build_lambda(theta, geom).matrix
    want = oracle_mvn_logpdf(yo, mean_cond_vector(theta, geom) + T @ yn,
                             cov_marginal(theta, geom, "cond").values)
    got = block_loglik_cond(theta, geom, obs.values[1], nwp.values[1])
    assert got == pytest.approx(want, rel=1e-10)


def test_total_is_sum_of_block_terms():
    geom, theta = _setup(seed=5)
    obs, nwp = simulate_panel(theta, geom, 4, seed=6)
    total = total_loglik(theta, geom, obs, nwp)
    acc = 0.0
    for k in range(4):
        acc += block_loglik_nwp(theta, geom, nwp.values[k])
        acc += block_loglik_cond(theta, geom, obs.values[k], nwp.values[k])
    assert total == pytest.approx(acc, rel=1e-12)


def test_block_subset_and_validation():
    geom, theta = _setup(seed=7)
    obs, nwp = simulate_panel(theta, geom, 5, seed=8)
    idx, ln, lc = per_block_logliks(theta, geom, obs, nwp,
                                    block_indices=[2, 4])
    assert idx == [2, 4] and ln.shape == (2,)
    with pytest.raises(ValueError):
        per_block_logliks(theta, geom, obs, nwp, block_indices=[9])


def test_masked_blocks_are_dropped():
    geom, theta = _setup(seed=9)
    obs, nwp = simulate_panel(theta, geom, 4, seed=10)
    mask = np.array(obs.mask)
    mask[1, 0, 0] = False
    from windfuse.core import Panel
    obs2 = Panel("obs", obs.stations, obs.blocks, np.array(obs.values),
                 mask, obs.transform)
    idx, _, _ = per_block_logliks(theta, geom, obs2, nwp)
    assert idx == [1, 3, 4]
    full = total_loglik(theta, geom, obs, nwp, block_indices=[1, 3, 4])
    assert total_loglik(theta, geom, obs2, nwp) == pytest.approx(full)


def test_no_complete_blocks_raises():
    geom, theta = _setup(seed=11)
    obs, nwp = simulate_panel(theta, geom, 2, seed=12)
    mask = np.array(obs.mask)
    mask[:, 0, 0] = False
    from windfuse.core import Panel
    obs2 = Panel("obs", obs.stations, obs.blocks, np.array(obs.values),
                 mask, obs.transform)
    with pytest.raises(ValueError):
        total_loglik(theta, geom, obs2, nwp)


def test_zero_transition_splits_into_independent_layers():
    geom, theta = _setup(seed=13)
    theta.cond_mean.nb_weight = np.zeros((3, 3))
    obs, nwp = simulate_panel(theta, geom, 3, seed=14)
    y = vectorize(obs.values[0])
    want = oracle_mvn_logpdf(y, mean_cond_vector(theta, geom),
                             cov_marginal(theta, geom, "cond").values)
    got = block_loglik_cond(theta, geom, obs.values[0], nwp.values[0])
    assert got == pytest.approx(want, rel=1e-10)


def test_station_relabeling_invariance():
    geom, theta = _setup(seed=15, j=3)
    obs, nwp = simulate_panel(theta, geom, 3, seed=16)
    base = total_loglik(theta, geom, obs, nwp)

    perm = [2, 0, 1]
    from windfuse.core import Panel
    from windfuse.model import Geometry
    stations2 = [geom.stations[i] for i in perm]
    geom2 = Geometry.build(stations2, list(geom.nwp_points), geom.h,
                           center=geom.center, land_uses=geom.land_uses)
    theta2 = theta.copy()
    theta2.cond_cov.site_sill = theta.cond_cov.site_sill[perm]
    theta2.cond_cov.site_decay = theta.cond_cov.site_decay[perm]
    theta2.cond_cov.site_nugget = theta.cond_cov.site_nugget[perm]
    obs2 = Panel("obs", stations2, obs.blocks, obs.values[:, :, perm],
                 obs.mask[:, :, perm], obs.transform)
    assert total_loglik(theta2, geom2, obs2, nwp) == pytest.approx(
        base, rel=1e-12)


def test_numerical_gradient_matches_fourth_order_stencil():
    geom, theta = _setup(seed=17, j=2, n=3, h=3)
    obs, nwp = simulate_panel(theta, geom, 3, seed=18)
    codec = ThetaCodec(geom.land_uses, [p.id for p in geom.nwp_points],
                       [s.id for s in geom.stations])
    res = numerical_gradient(theta, geom, obs, nwp, codec)
    assert not res.one_sided.any()

    x0 = codec.pack(theta)

    def f(x):
        return total_loglik(codec.unpack(x, theta), geom, obs, nwp)

    g4 = np.empty(codec.size)
    for k in range(codec.size):
        hk = max(1e-5 * abs(x0[k]), 1e-7)
        xs = [x0.copy() for _ in range(4)]
        xs[0][k] += 2 * hk
        xs[1][k] += hk
        xs[2][k] -= hk
        xs[3][k] -= 2 * hk
        g4[k] = (-f(xs[0]) + 8 * f(xs[1]) - 8 * f(xs[2]) + f(xs[3])) \
            / (12 * hk)
    err = np.linalg.norm(res.values - g4) / np.linalg.norm(g4)
    assert err < 1e-4


def test_gradient_reduced_structure_smaller_vector():
    geom, theta = _setup(seed=19)
    obs, nwp = simulate_panel(theta, geom, 2, seed=20)
    structure = ModelStructure.temporal()
    codec = ThetaCodec(geom.land_uses, [p.id for p in geom.nwp_points],
                       [s.id for s in geom.stations], structure)
    res = numerical_gradient(theta, geom, obs, nwp, codec, structure)
    assert res.values.shape == (codec.size,)
    assert np.all(np.isfinite(res.values))
