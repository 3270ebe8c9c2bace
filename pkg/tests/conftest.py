import numpy as np
import pytest

from hbe.record_io import load_record, partition_dataset
from hbe.synthetic import write_synthetic_database
from hbe.training import TrainConfig, build_global_pool, label_record, train_patient

GLOBAL_IDS = (100, 101, 103, 105, 106, 108)
PATIENT_IDS = (200, 201, 208)


@pytest.fixture(scope="session")
def synth_db(tmp_path_factory):
    """Small synthetic database: a few DS100 records and three DS200 patients."""
    root = tmp_path_factory.mktemp("db")
    write_synthetic_database(root, GLOBAL_IDS, minutes=6.0, seed=0)
    write_synthetic_database(root, PATIENT_IDS, minutes=12.0, seed=0)
    return root


@pytest.fixture(scope="session")
def split():
    return partition_dataset()


@pytest.fixture(scope="session")
def pool(synth_db, split):
    return build_global_pool(synth_db, split, records=GLOBAL_IDS)


@pytest.fixture(scope="session")
def fast_cfg():
    return TrainConfig(epochs=10, blend_epochs=20, global_per_class=40, seed=0)


@pytest.fixture(scope="session")
def patient_200(synth_db):
    return label_record(load_record(synth_db, 200))


@pytest.fixture(scope="session")
def trained_200(patient_200, pool, split, fast_cfg):
    bundle, report = train_patient(patient_200, pool, split, fast_cfg)
    return bundle, report


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    import test_acceptance

    if test_acceptance.REPORT:
        terminalreporter.section("acceptance criteria")
        for line in test_acceptance.REPORT:
            terminalreporter.write_line(line)
