import numpy as np
import pytest

from gridveil.netmodel import CostPoly, build_integrated, bundled_case, parse_case
from gridveil.sampling import generate_dataset, sample_space, split_dataset
from gridveil.surrogate import SurrogateBundle, TrainConfig, fit_quadratic, train_fr

# Three-bus network with a pinned slack voltage, one cheap remote generator
# and generous line ratings: small enough for exhaustive grid search, rich
# enough (losses, reactive limits, line charging) to exercise the assembler.
TOY3_TEXT = """
case toy3
base 100
bus 1 slack 0.9999 1.0001 -1.5707963267948966 1.5707963267948966 0 0
bus 2 pv 0.95 1.05 -1.5707963267948966 1.5707963267948966 20 5
bus 3 pq 0.95 1.05 -1.5707963267948966 1.5707963267948966 60 20
branch 1 2 0.02 0.06 0 1 120 1
branch 2 3 0.025 0.08 0 1 100 1
branch 1 3 0.03 0.09 0.02 1 100 1
gen 1 0 200 -100 100 0.02 30 0
gen 2 0 60 -40 40 0.015 10 0
"""


@pytest.fixture(scope="session")
def toy3():
    return parse_case(TOY3_TEXT, name="toy3")


@pytest.fixture(scope="session")
def ds1():
    return bundled_case("ds1")


@pytest.fixture(scope="session")
def ds2():
    return bundled_case("ds2")


@pytest.fixture(scope="session")
def ds3():
    return bundled_case("ds3")


@pytest.fixture(scope="session")
def ts30():
    return bundled_case("ts30")


@pytest.fixture(scope="session")
def ieee33():
    return bundled_case("ieee33")


@pytest.fixture(scope="session")
def integrated(ts30, ds1, ds2, ds3):
    return build_integrated(ts30, [ds1, ds2, ds3])


def train_bundle(
    case,
    ds_id: int,
    n_samples: int,
    n_h: int,
    cfg: TrainConfig,
    w_10: float = 2.0,
    sample_seed: int = 100,
    split_seed: int = 7,
    jobs: int | None = 1,
    dg_cost: CostPoly = CostPoly(0.02, 20.0),
):
    """Sample, train and wrap one DS into a disclosure bundle.

    Returns (bundle, dataset, test split, metrics-ready model) so callers can
    reuse the expensive artifacts.
    """
    from gridveil.surrogate import classification_metrics

    data = generate_dataset(case, n_samples, seed=sample_seed + ds_id, jobs=jobs)
    train, test = split_dataset(data, 0.2, seed=split_seed)
    fr = train_fr(train, n_h=n_h, w_10=w_10, w_01=1.0, hyper=cfg)
    space = sample_space(case)
    feas = train.label == 0
    base = case.base_mva
    pcc = []
    for u in range(space.n_pcc):
        pcc.append(
            {
                "p": fit_quadratic(
                    train.x[feas], -train.p_pcc[feas, u] / base, label="active", pcc_index=u
                ),
                "q": fit_quadratic(
                    train.x[feas], -train.q_pcc[feas, u] / base, label="reactive", pcc_index=u
                ),
            }
        )
    charts = case.charts_for(ds_id) if case.dg_charts else []
    bundle = SurrogateBundle(
        ds_id=ds_id,
        n_pcc=space.n_pcc,
        n_dg=case.n_gen,
        x_min=space.x_min,
        x_max=space.x_max,
        fr=fr,
        pcc=pcc,
        charts=list(charts),
        costs=[dg_cost] * case.n_gen,
    )
    metrics = classification_metrics(fr, test)
    return bundle, data, test, metrics


@pytest.fixture(scope="session")
def quick_bundles(ds1, ds2, ds3):
    """Small but usable bundles for the coupled-OPF and benchmark tests."""
    b1, *_ = train_bundle(
        ds1, 1, 2000, 12, TrainConfig(lr=3e-3, epochs=150, seed=3, restarts=2)
    )
    cfg = TrainConfig(lr=1e-2, lr_min=1e-4, epochs=150, patience=10**9, seed=3)
    b2, *_ = train_bundle(ds2, 2, 6000, 60, cfg)
    b3, *_ = train_bundle(ds3, 3, 6000, 60, cfg)
    return {1: b1, 2: b2, 3: b3}


@pytest.fixture()
def rng():
    return np.random.default_rng(0)
