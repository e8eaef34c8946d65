import numpy as np
import pytest

import octgate
from octgate import mahal


@pytest.fixture(scope="session")
def training_mscans():
    return [lab.mscan for lab in octgate.default_training_set()]


@pytest.fixture(scope="session")
def builtin_extractor():
    return octgate.make_builtin_extractor()


@pytest.fixture(scope="session")
def fitted_model(training_mscans, builtin_extractor):
    return mahal.fit_detector(training_mscans, builtin_extractor)


@pytest.fixture(scope="session")
def calibrated_model(fitted_model, builtin_extractor):
    holdout = [lab.mscan for lab in octgate.synth_dataset(300, seed=3003)]
    return mahal.calibrate_threshold(fitted_model, holdout, 0.99, builtin_extractor)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_mscan(rng):
    return octgate.MScan(rng.uniform(0, 255, size=(10, 64)).astype(np.float32))
