"""Seeded randomness with a replay-friendly draw counter.

Every stochastic step the simulator takes goes through :class:`GameRng`,
which counts documented draws.  Log events carry the counter value so a
diverging replay can be localized to the first draw that differed.  The
underlying generator is the stdlib Mersenne Twister, whose sequences are
stable across platforms and Python versions.
"""

from __future__ import annotations

import hashlib
import math
import random
from typing import Any, Sequence, TypeVar

T = TypeVar("T")


def split_seed(master_seed: int, label: str) -> int:
    """Derive a 64-bit child seed from a master seed and a label.

    Children for distinct labels are independent, and any trial can be
    reproduced in isolation from (master seed, label) alone.  The split is
    sha256 over ``"{master_seed}:{label}"``, truncated to 8 bytes.
    """
    digest = hashlib.sha256(f"{master_seed}:{label}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


class GameRng:
    """Counting wrapper around ``random.Random``.

    Each public method is one documented draw: it advances ``cursor`` by
    exactly 1 regardless of how many raw uniforms it consumes internally.
    """

    def __init__(self, seed: int):
        self._r = random.Random(seed)
        self.cursor = 0

    def random(self) -> float:
        """Uniform draw in [0, 1)."""
        self.cursor += 1
        return self._r.random()

    def normal(self, mean: float, std: float) -> float:
        """Normal draw via Box-Muller with no cached second value.

        Consumes exactly two raw uniforms every call, so the raw stream
        position is a fixed function of the draw count (unlike
        ``random.gauss``, whose cache would survive into unrelated draws).
        """
        u1 = 1.0 - self._r.random()  # (0, 1]; log(0) unreachable
        u2 = self._r.random()
        z = math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)
        self.cursor += 1
        return mean + std * z

    def index(self, n: int) -> int:
        """Uniform integer in [0, n)."""
        if n <= 0:
            raise ValueError("index() needs a non-empty range")
        self.cursor += 1
        return self._r.randrange(n)

    def int_between(self, low: int, high: int) -> int:
        """Uniform integer in [low, high], inclusive."""
        if high < low:
            raise ValueError("empty integer range")
        self.cursor += 1
        return self._r.randint(low, high)

    def choice(self, seq: Sequence[T]) -> T:
        """Uniform choice from a non-empty sequence (one draw)."""
        return seq[self.index(len(seq))]

    def getstate(self) -> dict[str, Any]:
        """JSON-serializable snapshot (used by checkpoints)."""
        version, internal, gauss_next = self._r.getstate()
        return {"cursor": self.cursor, "mt": [version, list(internal), gauss_next]}

    def setstate(self, state: dict[str, Any]) -> None:
        version, internal, gauss_next = state["mt"]
        self._r.setstate((version, tuple(internal), gauss_next))
        self.cursor = int(state["cursor"])
