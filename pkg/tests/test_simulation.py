import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats
from scipy.optimize import linear_sum_assignment

from clustercurriculum.exceptions import InvalidInputError, InvalidParameterError
from clustercurriculum.simulation import (
    FrechetScore,
    GaussianModelState,
    GaussianTrainer,
    GMMState,
    GMMTrainer,
    SyntheticSpec,
    frechet_distance,
    generate_synthetic,
    is_monotone_non_increasing,
    is_v_shaped,
    load_spec_file,
    sample_reference,
    score_against_reference,
    vshape_experiment,
)


def _spec(noise=50, counts=(100, 100), d=2, seed=0):
    data = {
        "seed": seed,
        "clusters": [
            {"mean": [-2.0] + [0.0] * (d - 1), "scale": 1.0, "count": counts[0]},
            {"mean": [2.0] + [0.0] * (d - 1), "scale": 1.0, "count": counts[1]},
        ],
    }
    if noise:
        data["noise"] = {"count": noise, "low": -10.0, "high": 10.0}
    return SyntheticSpec.from_dict(data)


def _random_spd(rng, d):
    A = rng.normal(size=(d, d))
    return A @ A.T + 0.3 * np.eye(d)


# -- synthetic data ---------------------------------------------------------

def test_generate_clusters_only():
    fs, y = generate_synthetic(_spec(noise=0))
    assert fs.m == 200
    assert np.sum(y == 0) == 100 and np.sum(y == 1) == 100


def test_noise_inside_box():
    fs, y = generate_synthetic(_spec(noise=50))
    noise = fs.points[y == -1]
    assert noise.shape == (50, 2)
    assert np.all((noise >= -10) & (noise <= 10))


def test_generation_is_bitwise_reproducible():
    a, ya = generate_synthetic(_spec(), seed=4)
    b, yb = generate_synthetic(_spec(), seed=4)
    assert a.points.tobytes() == b.points.tobytes() and np.array_equal(ya, yb)
    c, _ = generate_synthetic(_spec(), seed=5)
    assert not np.array_equal(a.points, c.points)


def test_reference_excludes_noise():
    ref = sample_reference(_spec(noise=500), 1000, seed=0)
    assert ref.shape == (1000, 2)
    assert np.abs(ref).max() < 8  # no uniform box points
    assert abs(np.mean(ref[:, 0] < 0) - 0.5) < 0.05


@pytest.mark.parametrize("bad", [
    {"clusters": [{"mean": [0, 0], "covariance": [[1, 2], [2, 1]], "count": 5}]},
    {"clusters": [{"mean": [0, 0], "covariance": [[1, 0.5], [0, 1]], "count": 5}]},
    {"clusters": [{"mean": [0, 0], "scale": 1, "count": 0}]},
    {"clusters": [{"mean": [20, 0], "scale": 1, "count": 5}],
     "noise": {"count": 3, "low": -10, "high": 10}},
    {"clusters": [{"mean": [0, 0], "scale": 1, "count": 5}], "colour": "red"},
    {"clusters": [{"mean": [0, 0], "scale": 1, "count": 5, "shape": 2}]},
    {"clusters": []},
])
def test_invalid_specs(bad):
    with pytest.raises(InvalidParameterError):
        SyntheticSpec.from_dict(bad)


def test_spec_files(tmp_path):
    spec, pipeline = load_spec_file("noisy")
    assert spec.d == 16 and spec.noise.count / spec.m == pytest.approx(0.3)
    assert pipeline["base_size"] == 200 and pipeline["increment"] == 100
    clean, _ = load_spec_file("clean")
    assert clean.noise is None
    path = tmp_path / "s.json"
    path.write_text(json.dumps({"clusters": [{"mean": [0, 0], "scale": 2, "count": 9}]}))
    spec, pipeline = load_spec_file(path)
    assert spec.m == 9 and pipeline == {}
    with pytest.raises(InvalidInputError):
        load_spec_file(tmp_path / "missing.toml")
    (tmp_path / "bad.toml").write_text("clusters = [")
    with pytest.raises(InvalidInputError):
        load_spec_file(tmp_path / "bad.toml")


# -- trainers ---------------------------------------------------------------

def test_gaussian_trainer_square():
    X = np.array([[0.0, 0.0], [2.0, 0.0], [0.0, 2.0], [2.0, 2.0]])
    s = GaussianTrainer().train(X)
    np.testing.assert_allclose(s.mean, [1.0, 1.0])
    np.testing.assert_allclose(s.covariance, np.diag([4 / 3, 4 / 3]), atol=1e-15)
    assert s.fitted_count == 4


def test_exact_mode_ignores_warm_start():
    X = np.random.default_rng(0).normal(size=(50, 3))
    t = GaussianTrainer()
    prev = GaussianModelState(np.ones(3), 5 * np.eye(3), 10)
    a, b = t.train(X), t.train(X, warm_start=prev)
    assert a.mean.tobytes() == b.mean.tobytes()
    assert a.covariance.tobytes() == b.covariance.tobytes()


def test_blend_mixes_moments():
    X = np.array([[-1.0], [1.0]])
    prev = GaussianModelState(np.array([4.0]), np.array([[1.0]]), 2)
    s = GaussianTrainer(blend=0.25).train(X, warm_start=prev)
    # new fit: mean 0, var 2; mixture 0.25/0.75
    assert s.mean[0] == pytest.approx(1.0)
    assert s.covariance[0, 0] == pytest.approx(0.25 * 1 + 0.75 * 2 + 0.25 * 9 + 0.75 * 1)


def test_trainer_standard_error():
    rng = np.random.default_rng(1)
    mu = np.array([1.0, -2.0, 0.5])
    sd = np.array([1.0, 2.0, 0.5])
    s = GaussianTrainer().train(mu + sd * rng.standard_normal((1000, 3)))
    assert np.all(np.abs(s.mean - mu) < 3 * sd / np.sqrt(1000))


def test_trainer_error_shrinks_with_count():
    rng = np.random.default_rng(2)
    errs = []
    for n in (100, 10_000):
        s = GaussianTrainer().train(rng.standard_normal((n, 2)))
        errs.append(np.abs(s.covariance - np.eye(2)).max())
    assert errs[1] < errs[0] / 3


def test_trainer_ridge_floor_and_errors():
    s = GaussianTrainer().train(np.ones((1, 3)))
    assert np.all(np.linalg.eigvalsh(s.covariance) >= 1e-6 - 1e-18)
    with pytest.raises(InvalidParameterError):
        GaussianTrainer().train(np.empty((0, 2)))


def test_gaussian_trainer_estimator_api():
    from sklearn.base import clone

    t = GaussianTrainer(ridge=1e-4).fit(np.random.default_rng(0).normal(size=(20, 2)))
    assert t.covariance_.shape == (2, 2)
    assert clone(t).get_params() == {"ridge": 1e-4, "blend": None}


def test_gmm_trainer_recovers_clusters():
    fs, y = generate_synthetic(_spec(noise=0, counts=(300, 300)))
    state = GMMTrainer(n_components=2).train(fs.points, seed=0)
    assert isinstance(state, GMMState)
    np.testing.assert_allclose(np.sort(state.means[:, 0]), [-2, 2], atol=0.3)
    again = GMMTrainer(n_components=2).train(fs.points, seed=0)
    assert again.means.tobytes() == state.means.tobytes()
    warm = GMMTrainer(n_components=2).train(fs.points, warm_start=state, seed=1)
    np.testing.assert_allclose(np.sort(warm.means[:, 0]), np.sort(state.means[:, 0]), atol=1e-3)


def test_gmm_moments():
    s = GMMState(np.array([0.5, 0.5]), np.array([[-1.0], [1.0]]),
                 np.array([[[1.0]], [[1.0]]]), 10)
    g = s.moments()
    assert g.mean[0] == pytest.approx(0.0) and g.covariance[0, 0] == pytest.approx(2.0)


# -- Frechet distance -------------------------------------------------------

def test_frechet_examples():
    a = GaussianModelState(np.zeros(3), np.diag([1.0, 2.0, 3.0]), 1)
    assert frechet_distance(a, a) == pytest.approx(0.0, abs=1e-12)
    v = np.array([1.0, -2.0, 0.5])
    b = GaussianModelState(v, a.covariance, 1)
    assert frechet_distance(a, b) == pytest.approx(v @ v)
    one = ([0.0], [[1.0]])
    assert frechet_distance(one, ([1.0], [[4.0]])) == pytest.approx(2.0)


def test_frechet_rejects_non_spd():
    with pytest.raises(InvalidParameterError):
        frechet_distance(([0.0, 0.0], np.eye(2)), ([0.0, 0.0], [[1.0, 0.0], [0.0, -1.0]]))
    with pytest.raises(InvalidParameterError):
        frechet_distance(([0.0, 0.0], np.eye(2)), ([0.0, 0.0], [[1.0, 0.5], [0.0, 1.0]]))
    with pytest.raises(InvalidParameterError):
        frechet_distance(([0.0], [[1.0]]), ([0.0, 0.0], np.eye(2)))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31), st.integers(1, 6))
def test_frechet_metric_axioms(seed, d):
    rng = np.random.default_rng(seed)
    a = (rng.normal(size=d), _random_spd(rng, d))
    b = (rng.normal(size=d), _random_spd(rng, d))
    ab, ba = frechet_distance(a, b), frechet_distance(b, a)
    assert ab >= 0
    assert ab == pytest.approx(ba, rel=1e-9, abs=1e-10)
    assert frechet_distance(a, a) < 1e-9 * np.trace(a[1])
    # square root satisfies the triangle inequality (it is a W2 distance)
    c = (rng.normal(size=d), _random_spd(rng, d))
    w = lambda p, q: np.sqrt(frechet_distance(p, q))  # noqa: E731
    assert w(a, c) <= w(a, b) + w(b, c) + 1e-9


def _w2_1d_quantile(mu1, s1, mu2, s2, n=100_000):
    # monotone coupling of quantile atoms is the exact discrete 1-D OT plan
    t = (np.arange(n) + 0.5) / n
    x = stats.norm.ppf(t, mu1, s1)
    y = stats.norm.ppf(t, mu2, s2)
    return np.mean((x - y) ** 2)


@pytest.mark.parametrize("seed", range(8))
def test_frechet_matches_1d_ot(seed):
    rng = np.random.default_rng(seed)
    mu1, mu2 = rng.normal(size=2)
    s1, s2 = rng.uniform(0.3, 3.0, size=2)
    closed = frechet_distance(([mu1], [[s1 ** 2]]), ([mu2], [[s2 ** 2]]))
    assert closed == pytest.approx(_w2_1d_quantile(mu1, s1, mu2, s2), rel=0.01)


def _polar_normal_atoms(n_rad=25, n_ang=48):
    """Equal-weight quantisation of N(0, I_2): chi_2 quantile rings of
    conditional-mean radius times staggered equally spaced angles,
    rescaled to unit covariance."""
    edges = stats.chi.ppf(np.linspace(0, 1, n_rad + 1), 2)
    with np.errstate(invalid="ignore"):
        head = np.where(np.isinf(edges), 0.0, -edges * np.exp(-edges ** 2 / 2))
    # antiderivative of r * (r exp(-r^2/2))
    F = head + np.sqrt(2 * np.pi) * (stats.norm.cdf(edges) - 0.5)
    r = n_rad * np.diff(F)
    shift = 0.5 * (np.arange(n_rad)[:, None] % 2)
    th = 2 * np.pi * (np.arange(n_ang)[None, :] + shift) / n_ang
    Z = np.stack([r[:, None] * np.cos(th), r[:, None] * np.sin(th)], -1).reshape(-1, 2)
    return Z / np.sqrt(np.mean(np.sum(Z ** 2, axis=1)) / 2)


def _w2_discrete(P, Q):
    C = ((P[:, None, :] - Q[None, :, :]) ** 2).sum(-1)
    rows, cols = linear_sum_assignment(C)
    return C[rows, cols].mean()


@pytest.mark.parametrize("seed", range(4))
def test_frechet_matches_2d_ot(seed):
    rng = np.random.default_rng(100 + seed)
    Sa, Sb = _random_spd(rng, 2), _random_spd(rng, 2)
    ma, mb = rng.normal(size=2), rng.normal(size=2)
    Z = _polar_normal_atoms()
    P = ma + Z @ np.linalg.cholesky(Sa).T
    Q = mb + Z @ np.linalg.cholesky(Sb).T
    closed = frechet_distance((ma, Sa), (mb, Sb))
    assert closed == pytest.approx(_w2_discrete(P, Q), rel=0.01)


# -- scoring ----------------------------------------------------------------

def test_score_on_reference_itself():
    ref = np.random.default_rng(3).normal(size=(500, 4))
    assert score_against_reference(GaussianTrainer().train(ref), ref) < 1e-10


def test_noise_hurts_score():
    rng = np.random.default_rng(4)
    ref = rng.normal(size=(1000, 3))
    noisy = np.vstack([ref, rng.uniform(-10, 10, size=(300, 3))])
    score = FrechetScore(ref)
    assert score(GaussianTrainer().train(noisy)) > score(GaussianTrainer().train(ref))


def test_inflated_variance_score_difference():
    score = FrechetScore(np.array([[-1.0], [1.0]]) * np.sqrt(0.5), ridge=0.0)  # var 1
    a = score(GaussianModelState(np.zeros(1), np.eye(1), 1))
    b = score(GaussianModelState(np.zeros(1), 4 * np.eye(1), 1))
    assert b - a == pytest.approx(1.0)


# -- curve shapes and experiments ------------------------------------------

@pytest.mark.parametrize("scores, v, mono", [
    ([3, 1, 2], True, False),
    ([3, 2, 1], False, True),
    ([1, 2, 3], False, False),
    ([2, 1, 1], False, True),
    ([1, 1], False, True),
])
def test_shape_predicates(scores, v, mono):
    assert is_v_shaped(scores) == v
    assert is_monotone_non_increasing(scores) == mono


def test_experiment_noisy_small():
    spec, _ = load_spec_file("noisy")
    summary = vshape_experiment(spec, 200, 100, range(3), active_size=300)
    assert summary.fraction_v_shaped == 1.0
    for c in summary.curves:
        assert min(c.scores) <= c.scores[-1]
    d = summary.to_dict()
    assert sum(d["optimal_stage_histogram"]) == 3
    assert len(d["active_curves"]) == 3


def test_experiment_is_reproducible():
    spec = _spec(noise=60)
    a = vshape_experiment(spec, 100, 50, [7])
    b = vshape_experiment(spec, 100, 50, [7])
    assert json.dumps(a.to_dict()) == json.dumps(b.to_dict())


def test_single_clean_cluster_prefers_all_data():
    spec = SyntheticSpec.from_dict(
        {"clusters": [{"mean": [0, 0], "scale": 1, "count": 400}]})
    summary = vshape_experiment(spec, 100, 100, range(3), reference_size=2000)
    for c in summary.curves:
        assert c.optimal_index == len(c.scores) - 1


def test_experiment_requires_seeds():
    with pytest.raises(InvalidParameterError):
        vshape_experiment(_spec(), 100, 50, [])
