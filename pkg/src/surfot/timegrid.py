"""Staggered time discretization of the unit interval.

Potentials live on the N+1 staggered nodes k/N; densities and constraint
slacks live on the N centered nodes (k + 1/2)/N. All operators act along
axis 0 and broadcast over any trailing shape.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class TimeGrid:
    """Uniform staggered grid with ``n_steps`` centered intervals."""

    n_steps: int

    def __post_init__(self):
        if self.n_steps < 1:
            raise ValueError(f"n_steps must be >= 1, got {self.n_steps}")

    @property
    def tau(self) -> float:
        return 1.0 / self.n_steps

    @property
    def staggered_times(self) -> np.ndarray:
        return np.arange(self.n_steps + 1) * self.tau

    @property
    def centered_times(self) -> np.ndarray:
        return (np.arange(self.n_steps) + 0.5) * self.tau

    # -- forward operators --------------------------------------------------

    def diff(self, staggered: np.ndarray) -> np.ndarray:
        """First difference onto centered nodes: (x_{k+1} - x_k) / tau."""
        x = np.asarray(staggered)
        return (x[1:] - x[:-1]) * self.n_steps

    def average(self, staggered: np.ndarray) -> np.ndarray:
        """Two-point average onto centered nodes."""
        x = np.asarray(staggered)
        return 0.5 * (x[1:] + x[:-1])

    # -- adjoints (plain transposes, no time weights) -----------------------

    def diff_adjoint(self, centered: np.ndarray) -> np.ndarray:
        """Transpose of :meth:`diff` mapping centered back to staggered."""
        y = np.asarray(centered)
        out = np.zeros((self.n_steps + 1,) + y.shape[1:])
        out[:-1] -= y
        out[1:] += y
        return out * self.n_steps

    def average_adjoint(self, centered: np.ndarray) -> np.ndarray:
        """Transpose of :meth:`average` mapping centered back to staggered."""
        y = np.asarray(centered)
        out = np.zeros((self.n_steps + 1,) + y.shape[1:])
        out[:-1] += y
        out[1:] += y
        return 0.5 * out

    # -- small dense matrices for the decoupled potential solve -------------

    def difference_matrix(self) -> np.ndarray:
        """Dense (N, N+1) matrix of :meth:`diff`."""
        n = self.n_steps
        d = np.zeros((n, n + 1))
        idx = np.arange(n)
        d[idx, idx] = -self.n_steps
        d[idx, idx + 1] = self.n_steps
        return d

    def averaging_matrix(self) -> np.ndarray:
        """Dense (N, N+1) matrix of :meth:`average`."""
        n = self.n_steps
        e = np.zeros((n, n + 1))
        idx = np.arange(n)
        e[idx, idx] = 0.5
        e[idx, idx + 1] = 0.5
        return e

    def staggered_multiplicity(self) -> np.ndarray:
        """How many centered intervals touch each staggered node: 1,2,...,2,1."""
        m = np.full(self.n_steps + 1, 2.0)
        m[0] = m[-1] = 1.0
        return m

    def dual_cell_lengths(self) -> np.ndarray:
        """Length of the staggered node's share of [0,1]: tau/2 at the ends."""
        return 0.5 * self.tau * self.staggered_multiplicity()
