"""Particle swarm with a gradient cognitive term and per-timestep swarm memory.

Update rule per iteration (velocity, then position):

    v <- w0 * v + c1 * (G_best - P) + c2 * mu
    P <- clip(P + v, -bound, bound)

with mu the objective gradient at the pre-update position.  The objective is
maximised.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .trajectory import ACTION_BOUND

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PsoConfig:
    n_particles: int = 15  # M
    memory_size: int = 5  # K
    pool: int = 5  # W
    iterations: int = 5  # I
    inertia: float = 1e-5  # w0
    social: float = 1e-5  # c1
    cognitive: float = 1e-4  # c2
    bound: float = ACTION_BOUND

    def __post_init__(self):
        M, K, W = self.n_particles, self.memory_size, self.pool
        if not (0 <= K < M and 1 <= W < M):
            raise ValueError("need K < M and 1 <= W < M")
        if W < K:
            raise ValueError("need W >= K")
        if self.iterations < 1:
            raise ValueError("need at least one iteration")
        if min(self.inertia, self.social, self.cognitive) < 0 or self.bound <= 0:
            raise ValueError("coefficients must be non-negative and the bound positive")


@dataclass
class Particle:
    position: np.ndarray
    velocity: np.ndarray
    value: float


@dataclass
class PsoResult:
    particles: list  # sorted by descending value
    best_position: np.ndarray
    best_value: float
    trace: list = field(default_factory=list)  # G_best value after init and each iteration
    reinitialized: int = 0


def pso_update(P, v, g_best, mu, inertia, social, cognitive, bound=None):
    """One velocity/position update; returns (P_new, v_new)."""
    v_new = inertia * v + social * (g_best - P) + cognitive * mu
    P_new = P + v_new
    if bound is not None:
        P_new = np.clip(P_new, -bound, bound)
    return P_new, v_new


def _evaluate(objective, gradient, P):
    if gradient is None:
        values, grads = objective(P)
    else:
        values, grads = objective(P), gradient(P)
    return np.asarray(values, dtype=float).reshape(len(P)), np.asarray(grads, dtype=float).reshape(P.shape)


def optimize(objective, gradient, shape, memory_entry, config: PsoConfig, rng: np.random.Generator) -> PsoResult:
    """Maximise ``objective`` over positions of ``shape`` (e.g. (T - t, 36)).

    ``objective`` and ``gradient`` take a batch (M, *shape).  When ``gradient``
    is None, ``objective`` must return ``(values, gradients)`` in one call.
    ``memory_entry`` is an (k, *shape) array of remembered positions or None.
    """
    M, b = config.n_particles, config.bound
    shape = tuple(shape)
    P = rng.uniform(-b, b, (M, *shape))
    if memory_entry is not None and len(memory_entry):
        mem = np.asarray(memory_entry, dtype=float)
        if mem.shape[1:] == shape:
            k = min(len(mem), config.memory_size)
            P[:k] = np.clip(mem[:k], -b, b)
        else:
            log.warning("memory entry shape %s does not match %s; ignored", mem.shape[1:], shape)
    v = np.zeros_like(P)
    values, grads = _evaluate(objective, gradient, P)
    P, values, grads, n_re = _reseed_nonfinite(objective, gradient, P, values, grads, rng, b)
    i = int(np.argmax(values))
    g_best, g_val = P[i].copy(), float(values[i])
    trace = [g_val]
    for _ in range(config.iterations):
        P, v = pso_update(P, v, g_best, grads, config.inertia, config.social, config.cognitive, b)
        values, grads = _evaluate(objective, gradient, P)
        P, values, grads, n = _reseed_nonfinite(objective, gradient, P, values, grads, rng, b)
        n_re += n
        i = int(np.argmax(values))
        if values[i] > g_val:
            g_best, g_val = P[i].copy(), float(values[i])
        trace.append(g_val)
    order = np.argsort(-values, kind="stable")
    particles = [Particle(P[j].copy(), v[j].copy(), float(values[j])) for j in order]
    return PsoResult(particles, g_best, g_val, trace, n_re)


def _reseed_nonfinite(objective, gradient, P, values, grads, rng, bound, attempts: int = 3):
    n = 0
    for _ in range(attempts):
        bad = ~np.isfinite(values) | ~np.all(np.isfinite(grads.reshape(len(P), -1)), axis=1)
        if not bad.any():
            break
        n += int(bad.sum())
        log.warning("re-initialising %d particle(s) with non-finite objective", int(bad.sum()))
        P = P.copy()
        P[bad] = rng.uniform(-bound, bound, P[bad].shape)
        values, grads = _evaluate(objective, gradient, P)
    bad = ~np.isfinite(values) | ~np.all(np.isfinite(grads.reshape(len(P), -1)), axis=1)
    if bad.any():
        values = np.where(bad, -np.inf, values)
        grads = np.where(bad.reshape(-1, *([1] * (grads.ndim - 1))), 0.0, grads)
    return P, values, grads, n


def select_action(sorted_particles, mode: str, W: int, rng: np.random.Generator | None = None) -> np.ndarray:
    """Train: uniform over the top W.  Test: the best particle."""
    if len(sorted_particles) < W:
        raise ValueError("fewer particles than the selection pool")
    if mode == "test":
        idx = 0
    elif mode == "train":
        idx = int(rng.integers(W)) if W > 1 else 0
    else:
        raise ValueError("mode must be 'train' or 'test'")
    return np.array(sorted_particles[idx].position)


class SwarmMemory:
    """Top-K positions per time step, carried from one episode to the next."""

    def __init__(self, capacity: int = 5):
        self.capacity = capacity
        self.slots: dict[int, np.ndarray] = {}

    def get(self, t: int):
        return self.slots.get(t)

    def __eq__(self, other):
        return (
            isinstance(other, SwarmMemory)
            and self.capacity == other.capacity
            and self.slots.keys() == other.slots.keys()
            and all(np.array_equal(self.slots[k], other.slots[k]) for k in self.slots)
        )

    def to_arrays(self) -> dict:
        return {f"memory/t{t}": v for t, v in sorted(self.slots.items())}

    @classmethod
    def from_arrays(cls, arrays: dict, capacity: int) -> "SwarmMemory":
        mem = cls(capacity)
        for k, v in arrays.items():
            if k.startswith("memory/t"):
                mem.slots[int(k[len("memory/t") :])] = np.array(v)
        return mem

    def save(self, path) -> None:
        np.savez(path, capacity=self.capacity, **self.to_arrays())

    @classmethod
    def load(cls, path) -> "SwarmMemory":
        with np.load(path) as z:
            return cls.from_arrays({k: z[k] for k in z.files}, int(z["capacity"]))


def update_memory(memory: SwarmMemory, t: int, sorted_particles, K: int) -> SwarmMemory:
    if len(sorted_particles) < K:
        raise ValueError("fewer particles than the memory size")
    memory.slots[t] = np.array([p.position for p in sorted_particles[:K]])
    return memory


def write_trace(path, rows) -> None:
    """Rows of (episode, step, iteration, best_value) to CSV."""
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["episode", "step", "iteration", "best_value"])
        for r in rows:
            w.writerow([r[0], r[1], r[2], repr(float(r[3]))])
