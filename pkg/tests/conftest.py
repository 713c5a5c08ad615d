import time

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from voxtok import latent_coder as lc
from voxtok.shapes import desk_grids

settings.register_profile("voxtok", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("voxtok")

DESK_TRAIN = 200
DESK_HELDOUT = 40

# filled in by tests/test_acceptance.py, printed at the end of the run
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def desk_train():
    return desk_grids(DESK_TRAIN, seed=0)


@pytest.fixture(scope="session")
def desk_heldout():
    return desk_grids(DESK_HELDOUT, seed=1)


@pytest.fixture(scope="session")
def desk_basis(desk_train):
    return lc.fit_basis(desk_train)


@pytest.fixture(scope="session")
def desk_vectors(desk_train, desk_basis):
    return lc.training_vectors(desk_train, desk_basis)


@pytest.fixture(scope="session")
def ablation(desk_basis, desk_vectors):
    """Stage-1 models at k = 64, 4096, 8192, 16384 on one shared basis.

    4096 -> 8192 -> 16384 are nested: each starts from the previous
    codebook. Also returns the wall time of the nested chain.
    """
    x, w = desk_vectors
    models = {}
    models[64] = lc.CoderModel(desk_basis, lc.fit_codebook_stage1(x, 64, seed=0, weights=w))
    t0 = time.perf_counter()
    prev = None
    for k in (4096, 8192, 16384):
        cb = lc.fit_codebook_stage1(x, k, seed=0, weights=w, init=prev)
        models[k] = lc.CoderModel(desk_basis, cb)
        prev = cb
    return models, time.perf_counter() - t0


@pytest.fixture(scope="session")
def model8192(ablation):
    return ablation[0][8192]


@pytest.fixture(scope="session")
def small_set():
    """20 procedural solid grids and a k=64 model trained on them, for fast tests."""
    grids = desk_grids(20, seed=2)
    model, _ = lc.train_model(grids, k=64, seed=0, epochs=0)
    return grids, model


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
