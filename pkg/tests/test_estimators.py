import warnings

import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from ibnrcox import (
    ChainLadder,
    ContinuousReservingModel,
    DirichletReservingModel,
    MultinomialReservingModel,
    chain_ladder,
)
from ibnrcox.em import ConvergenceWarning
from ibnrcox.predict import runoff_triangle, simulate_ibnr
from ibnrcox.serialize import dumps, fit_from_dict, fit_to_dict, read_json, write_json


def quiet_fit(est, ds):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvergenceWarning)
        return est.fit(ds)


@pytest.fixture(scope="module")
def fitted(small_mm_dataset, small_ll_dataset):
    ds, _ = small_mm_dataset
    ll, _ = small_ll_dataset
    return {
        "mm": (quiet_fit(MultinomialReservingModel(g=2), ds), ds),
        "dm": (quiet_fit(DirichletReservingModel(g=2, max_iter=20), ds), ds),
        "cm": (quiet_fit(ContinuousReservingModel(g=2), ll), ll),
    }


class TestEstimatorApi:
    @pytest.mark.parametrize("cls", [MultinomialReservingModel, DirichletReservingModel, ContinuousReservingModel, ChainLadder])
    def test_get_params_and_clone(self, cls):
        est = cls()
        params = est.get_params()
        twin = clone(est)
        assert twin.get_params() == params
        if "g" in params:
            assert clone(cls(g=3)).get_params()["g"] == 3

    def test_unfitted(self, small_mm_dataset):
        with pytest.raises(NotFittedError):
            MultinomialReservingModel().predict(small_mm_dataset[0])

    def test_rejects_non_dataset(self):
        with pytest.raises(TypeError):
            MultinomialReservingModel().fit(np.zeros((3, 3)))

    @pytest.mark.parametrize("kind", ["mm", "dm", "cm"])
    def test_fit_predict(self, fitted, kind):
        est, ds = fitted[kind]
        assert est.n_states_ == 2 and np.isfinite(est.score())
        out = est.predict(n_sims=300, seed=2)
        assert out.draws.shape == (300,)
        assert out.lower <= out.point <= out.upper

    def test_predict_seed(self, fitted):
        est, _ = fitted["mm"]
        np.testing.assert_array_equal(est.predict(n_sims=100, seed=4).draws, est.predict(n_sims=100, seed=4).draws)

    def test_selection(self, small_mm_dataset):
        est = quiet_fit(MultinomialReservingModel(g_max=2), small_mm_dataset[0])
        assert est.selection_.chosen_g == est.n_states_
        assert set(est.selection_.scores()) == {1, 2}

    def test_chain_ladder(self, small_mm_dataset):
        ds, _ = small_mm_dataset
        est = ChainLadder().fit(ds)
        assert est.predict() == chain_ladder(runoff_triangle(ds.runoff)).ibnr


class TestSerialization:
    @pytest.mark.parametrize("kind", ["mm", "dm", "cm"])
    def test_round_trip(self, fitted, kind, tmp_path):
        est, ds = fitted[kind]
        d = fit_to_dict(est.fit_result_, ds.freq_feature_names, ds.delay_feature_names)
        write_json(tmp_path / "m.json", d)
        back = fit_from_dict(read_json(tmp_path / "m.json"))
        np.testing.assert_array_equal(back.params.vector(), est.fit_result_.params.vector())
        assert back.loglik == est.fit_result_.loglik
        assert dumps(fit_to_dict(back, ds.freq_feature_names, ds.delay_feature_names)) == dumps(d)
        a = simulate_ibnr(est.fit_result_, ds, 100, seed=1).draws
        b = simulate_ibnr(back, ds, 100, seed=1).draws
        np.testing.assert_array_equal(a, b)

    def test_dumps_stable(self):
        text = dumps({"b": np.float64(0.1), "a": np.arange(2), "c": float("nan")})
        assert text == '{\n  "a": [\n    0,\n    1\n  ],\n  "b": 0.1,\n  "c": null\n}\n'

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            fit_from_dict({"kind": "xx", "pi": [1], "gamma": [[1]], "theta": [[0]]})
