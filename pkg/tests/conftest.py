from __future__ import annotations

import numpy as np
import pytest

from panelthresh import PanelDataset


def make_panel(variables: dict, metadata=None) -> PanelDataset:
    """Build a panel from {name: 2-D array-like} with auto labels."""
    first = np.asarray(next(iter(variables.values())))
    n, t = first.shape
    return PanelDataset(
        unit_ids=[f"u{i + 1}" for i in range(n)],
        periods=[str(j + 1) for j in range(t)],
        variables=variables,
        metadata=metadata,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(20260810)


def random_panel(rng, n=4, t=8, extra_vars=()) -> PanelDataset:
    """Random panel with threshold variable q and regressor x."""
    variables = {
        "y": rng.standard_normal((n, t)),
        "q": rng.uniform(0.0, 10.0, (n, t)),
        "x": rng.standard_normal((n, t)),
    }
    for name in extra_vars:
        variables[name] = rng.standard_normal((n, t))
    return make_panel(variables)
