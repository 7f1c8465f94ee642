import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gaussreg import evaluation
from gaussreg import tensor as T
from gaussreg.datasets import Dataset, fit_standardizer, gen_heteroscedastic
from gaussreg.errors import DataError, TrainingAbort
from gaussreg.evaluation import (
    BenchmarkResult,
    EvalReport,
    evaluate,
    fit_and_evaluate,
    mean_std,
    run_benchmark,
)
from gaussreg.gauss_head import LOG_2PI, GaussianPrediction, nll_batch
from gaussreg.network import Network, NetworkSpec
from gaussreg.trainer import TrainConfig

ENTROPY_FLOOR = 0.18399776891394937  # E[log sigma*(x)] + log(2 pi e)/2, x ~ U[-2, 2], via quad
COVER_K3 = 0.9973002039367398


def linear_net(w_mu, b_mu, sigma_std):
    """Single dense layer 1 -> (mu, raw sigma) with a constant sigma (standardized units)."""
    spec = NetworkSpec(1, (), (), output_dim=1)
    w = np.array([[w_mu, 0.0]])
    b = np.array([b_mu, T.inverse_softplus(sigma_std - spec.sigma_floor)])
    return Network(spec, [w, b])


def test_perfect_predictor():
    y = np.linspace(-3, 5, 50)
    data = Dataset(y[:, None], y[:, None])
    st_ = fit_standardizer(data)
    rep = evaluate(linear_net(1.0, 0.0, 1.0 / st_.y_std[0]), data, st_)
    assert rep.rmse < 1e-12 and rep.mae < 1e-12
    assert rep.mean_nll == pytest.approx(0.5 * LOG_2PI, abs=1e-9)


def test_constant_zero_predictor():
    data = Dataset(np.array([[0.0], [1.0]]), np.array([[3.0], [-3.0]]))
    st_ = fit_standardizer(data)
    rep = evaluate(linear_net(0.0, 0.0, 1.0), data, st_)
    assert rep.rmse == pytest.approx(3.0, abs=1e-12) and rep.mae == pytest.approx(3.0, abs=1e-12)
    assert set(rep.coverage) == {1.0, 2.0, 3.0}


def test_k3_coverage_on_gaussian_data():
    gen = np.random.default_rng(8)
    y = 4.0 + 2.0 * gen.standard_normal(10_000)
    data = Dataset(np.zeros((10_000, 1)), y[:, None])
    st_ = fit_standardizer(data)
    rep = evaluate(linear_net(0.0, 0.0, 1.0), data, st_)
    assert abs(rep.coverage[3.0] - COVER_K3) < 0.005
    assert rep.coverage[1.0] <= rep.coverage[2.0] <= rep.coverage[3.0]


def test_nll_invariant_to_internal_standardization():
    data = gen_heteroscedastic(300, 2)
    st_ = fit_standardizer(data)
    net = Network.init(NetworkSpec(1, ((8, "tanh"),), (8,), seed=3))
    rep = evaluate(net, data, st_)
    pred = net.predict(st_.transform_features(data.features)).affine(st_.y_mean, st_.y_std)
    assert abs(rep.mean_nll - nll_batch(pred, data.targets)) < 1e-9


def test_standardizer_mismatch():
    st_ = fit_standardizer(Dataset(np.zeros((3, 2)), np.zeros((3, 1))))
    with pytest.raises(DataError):
        evaluate(Network.init(NetworkSpec(1)), gen_heteroscedastic(5), st_)


def test_point_head_report():
    data = gen_heteroscedastic(50)
    rep = evaluate(Network.init(NetworkSpec(1, head="point")), data, fit_standardizer(data))
    assert rep.mean_nll is None and rep.coverage == {}


def test_report_validation_and_dict():
    with pytest.raises(ValueError):
        EvalReport(0.1, -1.0, 0.0)
    with pytest.raises(ValueError):
        EvalReport(0.1, 1.0, 0.5, {1.0: 1.5})
    rep = EvalReport(0.1, 1.0, 0.5, {1.0: 0.7, 3.0: 1.0}, 10)
    assert EvalReport.from_dict(rep.to_dict()) == rep


def test_mean_std():
    assert mean_std([]) == (None, None)
    assert mean_std([2.5]) == (2.5, None)
    m, s = mean_std([1.0, 2.0, 4.0])
    assert m == pytest.approx(7 / 3) and s == pytest.approx(np.std([1.0, 2.0, 4.0], ddof=1))


def small_bench(n_splits=3, **kw):
    data = gen_heteroscedastic(120, 5)
    spec = NetworkSpec(1, ((8, "tanh"),), (8,))
    return run_benchmark(data, n_splits, 0.1, TrainConfig(epochs=2), spec, seed=kw.pop("seed", 0), **kw)


def test_benchmark_aggregates_recompute_exactly():
    res = small_bench()
    agg = res.aggregate()
    nll = np.array([s.report.mean_nll for s in res.splits])
    assert agg["nll_mean"] == float(nll.mean()) and agg["nll_std"] == float(nll.std(ddof=1))
    back = BenchmarkResult.from_dict(res.to_dict())
    assert back.aggregate() == agg
    assert [s.seed for s in res.splits] == [0, 1, 2]


def test_benchmark_single_split():
    res = small_bench(1)
    agg = res.aggregate()
    assert agg["nll_std"] is None and agg["nll_mean"] == res.splits[0].report.mean_nll


def test_benchmark_deterministic():
    a, b = small_bench(2, seed=4), small_bench(2, seed=4)
    assert a.to_dict() == b.to_dict()


def test_benchmark_parallel_matches_serial():
    assert small_bench(2, workers=2).to_dict() == small_bench(2).to_dict()


def test_failed_split_excluded(monkeypatch):
    real = evaluation.fit_and_evaluate
    calls = []

    def flaky(spec, cfg, tr, te):
        calls.append(cfg.seed)
        if len(calls) == 2:
            raise TrainingAbort("non-finite loss at epoch 1, batch 0", 0, [1.0])
        return real(spec, cfg, tr, te)

    monkeypatch.setattr(evaluation, "fit_and_evaluate", flaky)
    res = small_bench(3)
    assert res.n_failed == 1 and len(res.succeeded) == 2
    assert res.aggregate()["n_failed"] == 1
    assert res.to_dict()["splits"][1]["status"] == "failed"


def test_benchmark_csv(tmp_path):
    res = small_bench(2)
    path = tmp_path / "b.csv"
    res.write_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0].startswith("split,seed,status,nll") and len(lines) == 3


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31), st.floats(0.1, 4.0))
def test_coverage_monotone_in_k(seed, spread):
    gen = np.random.default_rng(seed)
    mu, sd = gen.normal(size=(40, 1)), gen.uniform(0.1, 2, size=(40, 1))
    y = mu + spread * gen.standard_normal((40, 1))
    pred = GaussianPrediction(mu, sd)
    covs = [evaluation.coverage(pred, y, k) for k in (0.5, 1, 2, 3, 5)]
    assert covs == sorted(covs)


def test_entropy_floor_reached():
    train_set, test_set = gen_heteroscedastic(10_000, 0), gen_heteroscedastic(5_000, 99)
    spec = NetworkSpec(1, ((64, "tanh"), (64, "tanh")), (64,), "tanh")
    _, _, _, rep = fit_and_evaluate(spec, TrainConfig(epochs=30), train_set, test_set)
    assert abs(rep.mean_nll - ENTROPY_FLOOR) < 0.1
