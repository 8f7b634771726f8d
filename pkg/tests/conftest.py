from __future__ import annotations

import numpy as np
import pytest

from saddleperm import rng
from saddleperm.model_cgf import GroupDesign, TiltingModel, standardize_scalar, whiten_multivariate
from saddleperm.saddlepoint import conditional_context


def ksample_ranks(sizes):
    N = sum(sizes)
    return TiltingModel.ksample(standardize_scalar(np.arange(1.0, N + 1)), GroupDesign(tuple(sizes)))


@pytest.fixture(scope="session")
def table1_model():
    return ksample_ranks((5, 5, 5, 5))


@pytest.fixture(scope="session")
def table1_ctx(table1_model):
    return conditional_context(table1_model)


@pytest.fixture(scope="session")
def table3_model():
    X = rng.stream(1, rng.DATA).exponential(size=(80, 3))
    return TiltingModel.twosample(whiten_multivariate(X), GroupDesign((40, 40)))


@pytest.fixture(scope="session")
def table3_ctx(table3_model):
    return conditional_context(table3_model)


@pytest.fixture(scope="session")
def k2_model():
    return ksample_ranks((4, 4))


@pytest.fixture(scope="session")
def k2_ctx(k2_model):
    return conditional_context(k2_model)
