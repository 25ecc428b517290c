"""Dense float64 vector arithmetic and labeled deterministic RNG streams.

Every source of randomness in the simulator is an :class:`RngStream` derived
from a ``(master_seed, label)`` pair, so that any two runs sharing a master
seed replay the exact same selection, budget, and initialization draws while
streams with distinct labels stay statistically independent.

The generator is counter-based (numpy's Philox) keyed by SHA-256 of the
``(master_seed, label)`` pair, which makes every stream reproducible across
processes and platforms for a given numpy version.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "RngStream",
    "seeded_stream",
    "sample_normal",
    "hadamard",
    "axpy",
    "as_vector",
]


def as_vector(data) -> np.ndarray:
    """Coerce ``data`` to a 1-D float64 array (copying only if needed)."""
    vec = np.asarray(data, dtype=np.float64)
    if vec.ndim != 1:
        raise ValueError(f"expected a 1-D vector, got shape {vec.shape}")
    return vec


def _derive_key(master_seed: int, label: str) -> np.ndarray:
    digest = hashlib.sha256(f"{master_seed}\x1f{label}".encode("utf-8")).digest()
    return np.frombuffer(digest[:16], dtype=np.uint64)


@dataclass
class RngStream:
    """A labeled, replayable random stream.

    ``(master_seed, label)`` fully determines the output sequence. Streams
    are single-owner: give each logical actor (a client in a round, the
    selector, the budget sampler) its own labeled stream instead of sharing.
    """

    master_seed: int
    label: str
    gen: np.random.Generator = field(repr=False)

    def spawn(self, sublabel: str) -> "RngStream":
        """Derive an independent stream labeled ``label/sublabel``."""
        return seeded_stream(self.master_seed, f"{self.label}/{sublabel}")


def seeded_stream(master_seed: int, label: str) -> RngStream:
    """Create the deterministic stream identified by ``(master_seed, label)``."""
    if not label:
        raise ValueError("stream label must be nonempty")
    gen = np.random.Generator(np.random.Philox(key=_derive_key(master_seed, label)))
    return RngStream(master_seed=master_seed, label=label, gen=gen)


def sample_normal(stream: RngStream, mean: float, std: float, n: int) -> np.ndarray:
    """Draw ``n`` normal variates with the given mean and standard deviation.

    ``std == 0`` yields an exactly constant vector.
    """
    if std < 0:
        raise ValueError(f"std must be >= 0, got {std}")
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    out = stream.gen.normal(loc=mean, scale=std, size=n)
    assert np.isfinite(out).all()
    return out


def hadamard(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Elementwise product of two equal-length vectors."""
    a = as_vector(a)
    b = as_vector(b)
    if a.shape != b.shape:
        raise ValueError(f"length mismatch: {a.shape[0]} vs {b.shape[0]}")
    out = a * b
    assert np.isfinite(out).all()
    return out


def axpy(alpha: float, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Return ``alpha * x + y`` for equal-length vectors."""
    x = as_vector(x)
    y = as_vector(y)
    if x.shape != y.shape:
        raise ValueError(f"length mismatch: {x.shape[0]} vs {y.shape[0]}")
    out = alpha * x + y
    assert np.isfinite(out).all()
    return out
