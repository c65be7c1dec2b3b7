import os

import numpy as np
import pytest

from fmekit.dataset import ColumnKind, Dataset, load_csv, read_schema

REPO_ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
BIKES_CSV = os.path.join(REPO_ROOT, "data", "bikes.csv")
BIKES_SCHEMA = os.path.join(REPO_ROOT, "data", "bikes.schema.json")

requires_bikes = pytest.mark.skipif(
    not os.path.isfile(BIKES_CSV),
    reason=(
        "bike rental data not present; download the raw day.csv from the "
        "UCI repository and run: fmekit fetch-bikes --source day.csv "
        f"--out {os.path.join(REPO_ROOT, 'data')}"
    ),
)


@pytest.fixture(scope="session")
def bikes() -> Dataset:
    if not os.path.isfile(BIKES_CSV):
        pytest.skip("bike rental data not present")
    return load_csv(BIKES_CSV, schema=read_schema(BIKES_SCHEMA), target="count")


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240817)


@pytest.fixture
def numeric_data(rng) -> Dataset:
    n = 120
    return Dataset(
        "numeric",
        [
            ("temp", ColumnKind.NUMERIC, rng.uniform(-5.0, 30.0, n)),
            ("hum", ColumnKind.NUMERIC, rng.uniform(0.0, 1.0, n)),
            ("wind", ColumnKind.NUMERIC, rng.uniform(0.0, 40.0, n)),
        ],
    )


@pytest.fixture
def mixed_data(rng) -> Dataset:
    n = 90
    weather = [("clear", "misty", "rain")[i % 3] for i in range(n)]
    y = rng.normal(0.0, 1.0, n)
    return Dataset(
        "mixed",
        [
            ("temp", ColumnKind.NUMERIC, rng.uniform(-5.0, 30.0, n)),
            ("weather", ColumnKind.CATEGORICAL, weather),
            ("y", ColumnKind.NUMERIC, y),
        ],
        target="y",
    )
