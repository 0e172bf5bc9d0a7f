import jax
import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from ligflow.egnn import EGNNConfig
from ligflow.flow import FlowModel
from ligflow.model import LigandModel, ModelConfig

settings.register_profile("ligflow", deadline=None, max_examples=25,
                          suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture])
settings.load_profile("ligflow")


@pytest.fixture(scope="session")
def small_config():
    return EGNNConfig(ligand_features=5, receptor_features=5, hidden=16, signature=8, receptor_layers=2,
                      ligand_layers=2)


@pytest.fixture(scope="session")
def small_flow(small_config):
    # non-zero position updates so equivariance checks are not vacuous
    return FlowModel.init(jax.random.PRNGKey(3), small_config, zero_init=False)


@pytest.fixture(scope="session")
def small_model(small_config):
    return LigandModel.init(jax.random.PRNGKey(5), ModelConfig(small_config), zero_init=False)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# desk-scale run used by the learning-signal tests; trained once per session
DESK_MODEL = dict(hidden=32, signature=16)
DESK_TRAIN = dict(epochs=30, batch_size=16, learning_rate=2e-3, steps=20, seed=0)


@pytest.fixture(scope="session")
def desk_run(tmp_path_factory):
    import time

    from ligflow.io import synthetic_dataset
    from ligflow.train import TrainConfig, train

    out = tmp_path_factory.mktemp("desk")
    records = synthetic_dataset(200, seed=0)
    start = time.perf_counter()
    model, history = train(records, ModelConfig.default(**DESK_MODEL), TrainConfig(**DESK_TRAIN), out_dir=out)
    return {"model": model, "history": history, "seconds": time.perf_counter() - start, "dir": out,
            "solver_steps": DESK_TRAIN["steps"]}


@pytest.fixture(scope="session")
def tiny_records():
    from ligflow.io import synthetic_dataset

    return synthetic_dataset(12, seed=3)


@pytest.fixture(scope="session")
def tiny_setup():
    from ligflow.train import TrainConfig

    return ModelConfig.default(hidden=8, signature=4, layers=1), TrainConfig(epochs=2, batch_size=4, steps=4, seed=2)


_ACCEPTANCE = []


@pytest.fixture(scope="session")
def acceptance_log():
    """Record one pass/fail line per acceptance criterion."""

    def log(number, name, passed, detail):
        line = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {name}  ({detail})"
        _ACCEPTANCE.append((number, line))
        print(line)
        return passed

    return log


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(_ACCEPTANCE, key=lambda item: item[0]):
            terminalreporter.write_line(line)


@pytest.fixture(scope="module", autouse=True)
def _release_compiled_functions():
    # compiled executables for wide models pile up across modules on a small machine
    yield
    import gc

    jax.clear_caches()
    gc.collect()
