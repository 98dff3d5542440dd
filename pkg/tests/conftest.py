import numpy as np
import pytest

from genoiht.geno_matrix import CovariateBlock, PackedGenotypeMatrix, StandardizedView

from oracles import random_codes


@pytest.fixture
def rng():
    return np.random.default_rng(20250808)


@pytest.fixture
def small_codes(rng):
    return random_codes(rng, 20, 50, missing_rate=0.15)


@pytest.fixture
def small_matrix(small_codes):
    return PackedGenotypeMatrix.from_codes(small_codes)


@pytest.fixture
def small_view(small_matrix):
    return StandardizedView(small_matrix, None)


def make_view(codes, with_intercept=False, covar=None):
    matrix = PackedGenotypeMatrix.from_codes(codes)
    block = None
    if with_intercept or covar is not None:
        block = CovariateBlock.build(covar, n=matrix.n, add_intercept=with_intercept)
    return StandardizedView(matrix, block)
