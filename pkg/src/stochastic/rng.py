"""Counter-based Gaussian source keyed by (master seed, stream, step).

Each time step gets its own Philox counter block, so the normals used at
step k never depend on how many draws earlier steps consumed or on how an
ensemble is split across workers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from src import config as project_config


@dataclass(frozen=True)
class RngSeed:
    """64-bit master seed plus a stream id."""

    master: int
    stream: int = 0

    def __post_init__(self) -> None:
        master = project_config.parse_seed(self.master)
        if int(self.stream) < 0:
            raise ValueError(f"stream must be >= 0, got {self.stream}")
        object.__setattr__(self, "master", master)
        object.__setattr__(self, "stream", int(self.stream))

    @classmethod
    def default(cls, stream: int = 0) -> "RngSeed":
        return cls(project_config.DEFAULT_SEED, stream)

    @property
    def hex(self) -> str:
        return f"0x{self.master:x}"

    def child(self, stream: int) -> "RngSeed":
        """Same master seed, another stream."""
        return RngSeed(self.master, stream)

    def key(self) -> np.ndarray:
        """128-bit Philox key derived from (master, stream)."""
        seq = np.random.SeedSequence(self.master, spawn_key=(self.stream,))
        return seq.generate_state(2, dtype=np.uint64)

    def to_dict(self) -> dict:
        return {"master": self.hex, "stream": self.stream}


class GaussianStream:
    """Standard normal blocks of shape (n_paths, n_modes), one block per step.

    Row i of a block only depends on (seed, step, i), so enlarging the
    ensemble keeps the first paths unchanged.
    """

    def __init__(self, seed: RngSeed, n_modes: int) -> None:
        if int(n_modes) <= 0:
            raise ValueError(f"n_modes must be positive, got {n_modes}")
        self.seed = seed
        self.n_modes = int(n_modes)
        self._key = seed.key()

    def generator(self, step: int) -> np.random.Generator:
        counter = np.array([0, 0, int(step), 0], dtype=np.uint64)
        return np.random.Generator(np.random.Philox(key=self._key, counter=counter))

    def normals(self, step: int, n_paths: int) -> np.ndarray:
        if step < 0:
            raise ValueError(f"step must be >= 0, got {step}")
        return self.generator(step).standard_normal((int(n_paths), self.n_modes))

