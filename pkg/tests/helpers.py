"""Shared fixtures for the test suite."""

import numpy as np

from dfedsim.data import Dataset
from dfedsim.model import ObjectiveModel


class ConstantGradModel(ObjectiveModel):
    """Linear loss ``c . theta`` whose gradient is ``c`` everywhere."""

    def __init__(self, c):
        self.c = np.asarray(c, dtype=float)
        self.dim = self.c.size

    def _loss(self, params, x, y):
        return float(self.c @ params)

    def _grad(self, params, x, y):
        return self.c.copy()


def dummy_data(n=4):
    return Dataset(np.zeros((n, 1)), np.zeros(n))
