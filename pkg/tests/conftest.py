"""Shared fixtures: small scored datasets."""

import numpy as np
import pytest

from rtbconfig.dataset import CampaignDataset


def scored_dataset(attributes, profitability, *, costs=None, campaign_id=0, name="fixture"):
    """Build a single-campaign dataset with a profitability column."""
    attributes = np.asarray(attributes, dtype=np.int64)
    profitability = np.asarray(profitability, dtype=np.float64)
    if costs is None:
        costs = np.ones(len(attributes))
    return CampaignDataset.from_arrays(
        attributes,
        costs,
        profitability=profitability,
        campaign_id=campaign_id,
        name=name,
    )


def random_scored(seed, rows, n_attributes, cardinality, excluded=0.0):
    """Random attributes and exponential profitability; ``excluded`` rows get NaN."""
    rng = np.random.default_rng(seed)
    attributes = rng.integers(0, cardinality, size=(rows, n_attributes))
    profitability = rng.exponential(1.0, size=rows)
    if excluded:
        profitability[rng.random(rows) < excluded] = np.nan
    return scored_dataset(attributes, profitability, name=f"random-{seed}")


@pytest.fixture
def make_scored():
    return scored_dataset


@pytest.fixture
def make_random_scored():
    return random_scored
