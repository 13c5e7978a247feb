"""Counter-based Brownian increments.

Each trajectory owns a Philox stream keyed by ``(master_seed, trajectory)``.
Step ``s`` reads a fixed block of raw 64-bit words at counter offset
``s * blocks_per_step``, so any increment can be regenerated directly, in any
order and on any thread. Pairs of words become normals through Box-Muller.
"""
from __future__ import annotations

import numpy as np

_TWO53 = 2.0**-53


class NoiseSource:
    """Reproducible Wiener increments indexed by (trajectory, step, channel)."""

    def __init__(self, master_seed: int, n_channels: int):
        seed = int(master_seed)
        if not 0 <= seed < 2**64:
            raise ValueError(f"master_seed must fit in 64 unsigned bits, got {master_seed}")
        self.master_seed = seed
        self.m = int(n_channels)
        words = 2 * max(self.m, 1)
        self.blocks_per_step = -(-words // 4)
        self.words_per_step = 4 * self.blocks_per_step

    def _key(self, trajectory: int) -> int:
        return (self.master_seed << 64) | int(trajectory)

    def normals(self, trajectory: int, start: int, n_steps: int) -> np.ndarray:
        """Standard normals of shape ``(n_steps, m)`` for steps ``start..start+n_steps-1``."""
        if n_steps <= 0 or self.m == 0:
            return np.zeros((max(n_steps, 0), self.m))
        bg = np.random.Philox(key=self._key(trajectory), counter=start * self.blocks_per_step)
        raw = bg.random_raw(n_steps * self.words_per_step).reshape(n_steps, self.words_per_step)
        u1 = ((raw[:, 0 : 2 * self.m : 2] >> np.uint64(11)).astype(np.float64) + 1.0) * _TWO53
        u2 = (raw[:, 1 : 2 * self.m : 2] >> np.uint64(11)).astype(np.float64) * _TWO53
        return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)

    def increments(self, trajectory: int, start: int, n_steps: int, dt: float) -> np.ndarray:
        return np.sqrt(dt) * self.normals(trajectory, start, n_steps)

    def increment(self, trajectory: int, channel: int, step: int, dt: float) -> float:
        return float(self.increments(trajectory, step, 1, dt)[0, channel])

    def batch(self, trajectories, start: int, n_steps: int, dt: float) -> np.ndarray:
        """Increments of shape ``(n_steps, B, m)`` for a list of trajectories."""
        out = np.empty((n_steps, len(trajectories), self.m))
        for b, k in enumerate(trajectories):
            out[:, b, :] = self.increments(k, start, n_steps, dt)
        return out


def refine_pairs(fine: np.ndarray) -> np.ndarray:
    """Coarse increments from consecutive pairs of fine ones (same Brownian path)."""
    if fine.shape[0] % 2:
        raise ValueError("need an even number of fine steps")
    return fine[0::2] + fine[1::2]
