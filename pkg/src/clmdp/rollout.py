"""Vectorised successor sampling shared by the expert simulator and the harness."""

from __future__ import annotations

import numpy as np

from .mdp import TabularMdp


class Sampler:
    """Inverse-CDF sampling of successors for many (state, action) pairs at once."""

    def __init__(self, mdp: TabularMdp):
        t = mdp.transitions.tocsr()
        t.sort_indices()
        degree = np.diff(t.indptr)
        width = int(degree.max())
        rows = mdp.num_states * mdp.num_actions
        self.num_actions = mdp.num_actions
        self.successors = np.zeros((rows, width), dtype=np.int64)
        # padding sits above every uniform draw, so it is never counted
        self.cumulative = np.full((rows, width), 2.0)
        self.last = degree - 1
        for r in range(rows):
            lo, hi = t.indptr[r], t.indptr[r + 1]
            self.successors[r, : hi - lo] = t.indices[lo:hi]
            self.cumulative[r, : hi - lo] = np.cumsum(t.data[lo:hi])

    def step(self, states: np.ndarray, actions: np.ndarray, uniforms: np.ndarray) -> np.ndarray:
        rows = states * self.num_actions + actions
        pick = (self.cumulative[rows] <= uniforms[:, None]).sum(axis=1)
        # guards against cumulative sums that round just below 1
        pick = np.minimum(pick, self.last[rows])
        return self.successors[rows, pick]
