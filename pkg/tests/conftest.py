from __future__ import annotations

import numpy as np
import pytest

from pairmatch import ModelParams, sample_csbm


@pytest.fixture
def params_small() -> ModelParams:
    return ModelParams(2000, 0.4, 0.1)


@pytest.fixture
def graph_small(params_small):
    return sample_csbm(params_small, 11)


def touched_by_window(ledger, windows):
    """Per epoch window (first, last), the set of nodes queried inside it."""
    a, b, _, _ = ledger.log()
    out = []
    for first, last in windows:
        sl = slice(first - 1, min(last, a.size))
        out.append(set(np.r_[a[sl], b[sl]].tolist()))
    return out
