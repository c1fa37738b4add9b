import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from krigrmc import ContractSpec, GbmModel, KrigingRMC, LSMCPricer, Problem, TimeGrid
from krigrmc.design import DomainInfeasibleError

PROB = Problem(GbmModel(0.06, 0.0, (0.2,), (40.0,)), ContractSpec("put", 40.0, 0.06), TimeGrid(1.0, 5))


def test_params_roundtrip_and_clone():
    est = KrigingRMC(design="sobol", n_sim=1000, lower=[25.0], upper=[40.0], kernel="sqexp", seed=4)
    params = est.get_params()
    assert params["design"] == "sobol" and params["seed"] == 4
    assert clone(est).get_params() == params
    assert est.set_params(seed=9).seed == 9
    assert set(LSMCPricer().get_params()) == {"basis", "degree", "cells", "n_paths", "itm_only", "seed"}


def test_unfitted_estimators_refuse_to_value():
    with pytest.raises(NotFittedError):
        KrigingRMC(lower=[25.0], upper=[40.0]).value()
    with pytest.raises(NotFittedError):
        LSMCPricer().exercise(0.2, [[30.0]])


def test_configuration_errors():
    with pytest.raises(ValueError):
        KrigingRMC(design="lhs").fit(PROB)
    with pytest.raises(ValueError):
        KrigingRMC(n_sim=50, reps=100, lower=[25.0], upper=[40.0]).fit(PROB)
    with pytest.raises(DomainInfeasibleError):
        KrigingRMC(lower=[25.0, 25.0], upper=[55.0, 55.0], mean_cap=10.0).fit(PROB)


def test_fit_value_and_exercise():
    est = KrigingRMC(n_sim=1000, reps=100, lower=[25.0], upper=[40.0], seed=1).fit(PROB)
    v, se = est.value(n_out=20_000)
    assert 2.0 < v < 2.5 and 0 < se < 0.05
    assert est.n_valuation_sims_ == 20_000 * 5
    assert est.exercise(1.0, [[45.0]])[0] and not est.exercise(0.4, [[45.0]])[0]
    assert est.exercise(0.4, np.array([[28.0]]))[0]
    # the fixed out-of-sample set makes valuation repeatable
    assert est.value(n_out=20_000) == (v, se)
