"""Core types shared across the simulator.

Everything here is deliberately small: flat float64 model vectors, a role
table describing who is selfish, the per-round exchange of shared models,
the attack plan, and a counter-based deterministic RNG.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np


# ---------------------------------------------------------------------------
# errors
# ---------------------------------------------------------------------------

class ThreatModelViolation(ValueError):
    """Role counts that break the colluding-minority assumption."""


class EmptyGroup(ValueError):
    """A role group that must be populated is empty."""


class EmptyInput(ValueError):
    """An aggregation call received no models."""


class DimensionMismatch(ValueError):
    """Model vectors of different lengths were mixed."""


class EmptyAfterTrim(ValueError):
    """Trimming removed every value."""


class TooFewModels(ValueError):
    """Not enough models for the requested selection rule."""


class ZeroReference(ValueError):
    """A reference model with zero norm cannot anchor trust scores."""


class InvalidBounds(ValueError):
    """Interval with lower > upper."""


class NotSorted(ValueError):
    """A sequence that must be sorted in descending order is not."""


class IndexOutOfRange(ValueError):
    """Too few benign values for the requested selfish count."""


class OutOfBounds(ValueError):
    """A crafting target outside the reachable interval."""


class SearchFailure(RuntimeError):
    """The crafted-share search exhausted its range; indicates a bug."""


class DegenerateDenominator(ValueError):
    """A crafting denominator too close to zero to divide by."""


class NonMonotonicRound(ValueError):
    """Detector rounds must advance one at a time."""


class EmptyDataset(ValueError):
    """A training shard with no examples."""


class EmptyTestSet(ValueError):
    """An evaluation set with no examples."""


class ConfigError(ValueError):
    """A configuration document failed validation."""


# ---------------------------------------------------------------------------
# model vectors
# ---------------------------------------------------------------------------

def as_model_vector(values: Iterable[float]) -> np.ndarray:
    """Return a read-only 1-D float64 array, rejecting NaN/Inf entries."""
    vec = np.asarray(values, dtype=np.float64)
    if vec.ndim != 1:
        raise ValueError(f"model vector must be 1-D, got shape {vec.shape}")
    if vec.size == 0:
        raise ValueError("model vector must not be empty")
    if not np.all(np.isfinite(vec)):
        raise ValueError("model vector contains non-finite entries")
    vec = vec.copy()
    vec.flags.writeable = False
    return vec


def check_same_dimension(models: Iterable[np.ndarray]) -> int:
    """Return the common length of the given vectors or raise."""
    dims = {int(m.shape[-1]) for m in models}
    if len(dims) > 1:
        raise DimensionMismatch(f"mixed model dimensions: {sorted(dims)}")
    if not dims:
        raise EmptyInput("no models given")
    return dims.pop()


# ---------------------------------------------------------------------------
# roles
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RoleConfig:
    """Client role table.

    Non-selfish clients take ids ``0 .. n-1``, selfish clients take ids
    ``n .. n+m-1``.  The colluding minority must satisfy ``n + m >= 3m + 1``.

    Attributes:
        n: number of non-selfish clients.
        m: number of selfish clients.
    """

    n: int
    m: int

    def __post_init__(self) -> None:
        if self.n < 1:
            raise EmptyGroup("need at least one non-selfish client")
        if self.m < 1:
            raise EmptyGroup("need at least one selfish client")
        if self.total < 3 * self.m + 1:
            raise ThreatModelViolation(
                f"n + m = {self.total} violates n + m >= 3m + 1 for m = {self.m}"
            )

    @property
    def total(self) -> int:
        return self.n + self.m

    def is_selfish(self, client_id: int) -> bool:
        if not 0 <= client_id < self.total:
            raise ValueError(f"client id {client_id} out of range 0..{self.total - 1}")
        return client_id >= self.n

    @property
    def non_selfish_ids(self) -> range:
        return range(self.n)

    @property
    def selfish_ids(self) -> range:
        return range(self.n, self.total)


# ---------------------------------------------------------------------------
# per-round exchange
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RoundExchange:
    """Shared models of one round.

    ``shared[(j, i)]`` is the model client ``j`` sent to client ``i``; the
    self entry ``(i, i)`` always equals ``pre_agg[i]``, the model client ``i``
    produced in the local-training step before aggregation.
    """

    shared: Mapping[tuple[int, int], np.ndarray]
    pre_agg: Mapping[int, np.ndarray]

    def validate_complete(self, num_clients: int) -> None:
        """Check every sender/receiver pair is present and self entries match."""
        for i in range(num_clients):
            if i not in self.pre_agg:
                raise ValueError(f"missing pre-aggregation model for client {i}")
            for j in range(num_clients):
                if (j, i) not in self.shared:
                    raise ValueError(f"missing shared model from {j} to {i}")
        for i in range(num_clients):
            if not np.array_equal(self.shared[(i, i)], self.pre_agg[i]):
                raise ValueError(f"self entry of client {i} differs from its pre-agg model")

    def shares_for(self, receiver: int, senders: Iterable[int]) -> list[np.ndarray]:
        """Shared models addressed to ``receiver``, in sender order."""
        return [self.shared[(j, receiver)] for j in senders]


# ---------------------------------------------------------------------------
# attack plan
# ---------------------------------------------------------------------------

INFO_MODES = ("all", "selfish_only")


@dataclass(frozen=True)
class AttackPlan:
    """Knobs of the selfish crafting attack.

    Attributes:
        lam: trade-off weight between staying close to the receiver's own
            model (small ``lam``) and moving away from the benign-only
            aggregate (large ``lam``).  Must be >= 0.
        b: positive offset used to park surplus crafted values strictly
            outside the benign range.
        epsilon: plateau-detection threshold in (0, 1).
        interval: detection window length in rounds, >= 1.
        info_mode: which shares the selfish clients themselves aggregate —
            ``"all"`` or ``"selfish_only"``.
        selfish_rule: aggregation rule the selfish clients run locally;
            ``None`` means "resolve from the experiment's rule".
    """

    lam: float = 0.0
    b: float = 1.0
    epsilon: float = 0.1
    interval: int = 50
    info_mode: str = "all"
    selfish_rule: object | None = None

    def __post_init__(self) -> None:
        if not (np.isfinite(self.lam) and self.lam >= 0.0):
            raise ValueError(f"lam must be a finite value >= 0, got {self.lam}")
        if not (np.isfinite(self.b) and self.b > 0.0):
            raise ValueError(f"b must be a finite value > 0, got {self.b}")
        if not (0.0 < self.epsilon < 1.0):
            raise ValueError(f"epsilon must lie in (0, 1), got {self.epsilon}")
        if self.interval < 1:
            raise ValueError(f"interval must be >= 1, got {self.interval}")
        if self.info_mode not in INFO_MODES:
            raise ValueError(f"info_mode must be one of {INFO_MODES}, got {self.info_mode!r}")


# ---------------------------------------------------------------------------
# deterministic RNG
# ---------------------------------------------------------------------------

# stream tags keep independent parts of a run on disjoint substreams
STREAM_DATA = 0
STREAM_PARTITION = 1
STREAM_TRAIN = 2
STREAM_ATTACK = 3
STREAM_TEST = 4
STREAM_SWEEP = 5


@dataclass(frozen=True)
class Rng:
    """Counter-based deterministic RNG with derived substreams.

    Built on Philox: the same seed and the same derivation path always
    reproduce the same stream, independent of call order elsewhere.
    """

    seed: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "seed", int(self.seed) & 0xFFFFFFFFFFFFFFFF)

    def stream(self, *path: int) -> np.random.Generator:
        """Generator for the substream identified by ``path`` (e.g. tag, round, client)."""
        key = tuple(int(p) for p in path)
        if any(p < 0 for p in key):
            raise ValueError(f"stream path must be non-negative, got {key}")
        seq = np.random.SeedSequence(self.seed, spawn_key=key)
        return np.random.Generator(np.random.Philox(seq))
