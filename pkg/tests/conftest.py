import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from growthmc import data, sampler
from growthmc.model import REFERENCE_ESTIMATES, PriorSpec


@pytest.fixture(scope="session")
def sim_dataset():
    """Mid-size synthetic dataset shared by fit-dependent tests."""
    dataset, truth = data.simulate_dataset(
        REFERENCE_ESTIMATES,
        data.SimDesign(n_patients=15, obs_per_patient=10),
        seed=42,
    )
    return dataset, truth


@pytest.fixture(scope="session")
def sim_fit(sim_dataset):
    """One reusable converged-ish fit of the shared dataset."""
    dataset, _ = sim_dataset
    config = sampler.McmcConfig(
        n_chains=3, iterations=4000, burn_in=4000, thin=5, seed=11
    )
    return sampler.run(dataset, PriorSpec(), config)
