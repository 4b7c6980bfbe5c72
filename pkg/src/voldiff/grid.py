"""The fixed 9x9 moneyness/tenor grid every surface lives on."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

MONEYNESS = (0.6, 0.7, 0.8, 0.9, 1.0, 1.1, 1.2, 1.3, 1.4)
TENORS = (1 / 252, 1 / 52, 2 / 52, 1 / 12, 1 / 6, 1 / 4, 1 / 2, 3 / 4, 1.0)


@dataclass(frozen=True)
class GridSpec:
    """Rows are moneyness K/S ascending, columns are tenor (years) ascending."""

    moneyness: tuple[float, ...] = MONEYNESS
    tenors: tuple[float, ...] = TENORS

    def __post_init__(self):
        m = np.asarray(self.moneyness)
        tau = np.asarray(self.tenors)
        if m.shape != (9,) or tau.shape != (9,):
            raise ValueError("grid must be exactly 9x9")
        if np.any(np.diff(m) <= 0) or np.any(np.diff(tau) <= 0):
            raise ValueError("grid axes must be strictly increasing")
        if m[0] <= 0 or tau[0] <= 0:
            raise ValueError("grid axes must be positive")

    @property
    def shape(self) -> tuple[int, int]:
        return (len(self.moneyness), len(self.tenors))

    @property
    def m(self) -> np.ndarray:
        return np.asarray(self.moneyness, dtype=np.float64)

    @property
    def tau(self) -> np.ndarray:
        return np.asarray(self.tenors, dtype=np.float64)

    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        """(M, T) arrays of shape 9x9 with M[i, j] = m_i and T[i, j] = tau_j."""
        return np.meshgrid(self.m, self.tau, indexing="ij")

    def index_of_moneyness(self, value: float) -> int:
        return int(np.argmin(np.abs(self.m - value)))

    def index_of_tenor(self, value: float) -> int:
        return int(np.argmin(np.abs(self.tau - value)))


DEFAULT_GRID = GridSpec()
