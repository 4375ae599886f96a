"""Hidden click stream and the attribution adversary.

The simulator owns the two sources of randomness the learner never sees:
the i.i.d. labeled stream (X_1, Y_1), ..., (X_n, Y_n), and the oblivious
adversary that, for the j-th conversion at stream index i_j, publishes a
window of k consecutive stream indices in which the conversion sits at
window position r with probability pi[r]. Window slot i therefore holds
stream index

    clamp(i_j + i - r, first, last),

with out-of-range slots clamped to the stream boundary. Learner-facing
outputs expose only feature vectors and index windows; labels and true
positions stay on the simulator/oracle side.

Per-conversion draws use counter-style RNG splitting (a child generator
seeded by (master_seed, j)) so each attribution set is reproducible in
isolation, independent of iteration order.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import IO, Iterable

import numpy as np

from .errors import DatasetError, DomainError
from .priors import Prior, custom_prior

__all__ = [
    "SyntheticTask",
    "LabeledStream",
    "AttributionSet",
    "sample_stream",
    "stream_from_dataset",
    "generate_attribution_sets",
    "hallucination_dataset",
    "write_set_records",
    "read_set_records",
    "write_oracle_records",
    "read_oracle_records",
]


@dataclass(frozen=True)
class SyntheticTask:
    """Two-class Gaussian-mixture feature model with P(Y=1) = positive_rate.

    Each class law is a mixture of isotropic Gaussians: `*_means` has shape
    (components, dim) and `*_scales` one standard deviation per component.
    """

    positive_rate: float
    dim: int
    pos_means: np.ndarray
    neg_means: np.ndarray
    pos_scales: np.ndarray = field(default=None)
    neg_scales: np.ndarray = field(default=None)

    def __post_init__(self):
        if not (0.0 < self.positive_rate <= 0.5):
            raise DomainError(
                f"positive_rate must lie in (0, 0.5], got {self.positive_rate}"
            )
        for name in ("pos_means", "neg_means"):
            m = np.atleast_2d(np.asarray(getattr(self, name), dtype=np.float64))
            if m.shape[1] != self.dim:
                raise DomainError(f"{name} must have {self.dim} columns")
            object.__setattr__(self, name, m)
        for name, means in (("pos_scales", self.pos_means), ("neg_scales", self.neg_means)):
            s = getattr(self, name)
            s = np.ones(means.shape[0]) if s is None else np.broadcast_to(
                np.asarray(s, dtype=np.float64), (means.shape[0],)
            ).copy()
            if np.any(s <= 0) or not np.all(np.isfinite(s)):
                raise DomainError(f"{name} must be positive and finite")
            object.__setattr__(self, name, s)

    @staticmethod
    def default(positive_rate: float = 0.1, dim: int = 10, separation: float = 3.0,
                seed: int = 0) -> "SyntheticTask":
        """A linearly well-separated two-Gaussian task used across the demos."""
        rng = np.random.default_rng(seed)
        direction = rng.normal(size=dim)
        direction /= np.linalg.norm(direction)
        return SyntheticTask(
            positive_rate=positive_rate,
            dim=dim,
            pos_means=(separation / 2.0) * direction[None, :],
            neg_means=(-separation / 2.0) * direction[None, :],
        )


@dataclass
class LabeledStream:
    """Hidden i.i.d. sequence; only the simulator and the oracle may read labels."""

    features: np.ndarray  # (n, d)
    labels: np.ndarray  # (n,) in {0, 1}
    conversion_indices: np.ndarray  # 0-based, strictly increasing

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int8)
        expected = np.flatnonzero(self.labels == 1)
        if not np.array_equal(np.asarray(self.conversion_indices), expected):
            raise DomainError("conversion_indices inconsistent with labels")
        self.conversion_indices = expected

    @property
    def n(self) -> int:
        return int(self.labels.size)

    @property
    def num_conversions(self) -> int:
        return int(self.conversion_indices.size)


@dataclass
class AttributionSet:
    """Window of k stream indices attached to the j-th conversion.

    `indices` are 0-based stream indices (consecutive before clamping).
    `true_position` is the adversary's draw r in 1..k; it is simulator
    private and is None on any learner-facing copy.
    """

    j: int
    start: int
    indices: np.ndarray
    true_position: int | None = None

    def __post_init__(self):
        self.indices = np.asarray(self.indices, dtype=np.int64)

    @property
    def k(self) -> int:
        return int(self.indices.size)


def sample_stream(task: SyntheticTask, n: int, seed) -> LabeledStream:
    """Draw n i.i.d. (X, Y) pairs from the task; deterministic given seed."""
    if n < 1:
        raise DomainError(f"n must be >= 1, got {n}")
    rng = np.random.default_rng(seed)
    labels = (rng.random(n) < task.positive_rate).astype(np.int8)
    features = np.empty((n, task.dim))
    for value, means, scales in (
        (1, task.pos_means, task.pos_scales),
        (0, task.neg_means, task.neg_scales),
    ):
        rows = np.flatnonzero(labels == value)
        comp = rng.integers(0, means.shape[0], size=rows.size)
        features[rows] = means[comp] + scales[comp, None] * rng.normal(
            size=(rows.size, task.dim)
        )
    return LabeledStream(features, labels, np.flatnonzero(labels == 1))


def stream_from_dataset(features, labels, seed) -> LabeledStream:
    """Shuffle a fixed dataset once (seeded) and treat the result as the stream."""
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels)
    if features.shape[0] != labels.shape[0]:
        raise DomainError("features and labels disagree on length")
    perm = np.random.default_rng(seed).permutation(labels.shape[0])
    labels = labels[perm].astype(np.int8)
    return LabeledStream(features[perm], labels, np.flatnonzero(labels == 1))


# Counter-based per-conversion randomness: splitmix64 of (seed, stream, j).
# Each conversion's draw is a pure function of the master seed and its
# ordinal, so any subset of sets can be re-derived in any order. Distinct
# stream constants keep the adversary's draws independent of the baseline
# hallucination draws under a shared master seed.
_ADVERSARY_STREAM = np.uint64(0x853C49E6748FEA9B)
_HALLUCINATION_STREAM = np.uint64(0xDA3E39CB94B95BDB)
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)


def _counter_uniforms(master_seed, ordinals: np.ndarray, stream: np.uint64) -> np.ndarray:
    """One uniform in [0, 1) per ordinal, splitmix64-mixed."""
    seed64 = np.uint64(int(master_seed) & 0xFFFFFFFFFFFFFFFF) ^ stream
    with np.errstate(over="ignore"):
        z = seed64 + _GOLDEN * ordinals.astype(np.uint64)
        z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
        z = z ^ (z >> np.uint64(31))
    return (z >> np.uint64(11)).astype(np.float64) / float(1 << 53)


def _draw_positions(prior: Prior, master_seed, ordinals: np.ndarray,
                    stream: np.uint64) -> np.ndarray:
    """1-based prior draws, one per ordinal."""
    cdf = np.cumsum(prior.weights)
    u = _counter_uniforms(master_seed, ordinals, stream)
    return np.minimum(np.searchsorted(cdf, u, side="right") + 1, prior.k)


def generate_attribution_sets(
    stream: LabeledStream, prior: Prior, seed
) -> list[AttributionSet]:
    """One attribution set per conversion, placements drawn independently from the prior."""
    n = stream.n
    k = prior.k
    conv = stream.conversion_indices
    ordinals = np.arange(1, conv.size + 1)
    r = _draw_positions(prior, seed, ordinals, _ADVERSARY_STREAM)
    # window slot i (1-based) holds stream index conv + i - r, clamped
    raw = conv[:, None] + np.arange(1, k + 1)[None, :] - r[:, None]
    indices = np.clip(raw, 0, n - 1)
    return [
        AttributionSet(j=int(j), start=int(indices[j - 1, 0]),
                       indices=indices[j - 1], true_position=int(r[j - 1]))
        for j in ordinals
    ]


def hallucination_dataset(
    sets: Iterable[AttributionSet],
    features: np.ndarray,
    prior: Prior,
    mode: str,
    seed,
) -> tuple[np.ndarray, np.ndarray]:
    """Guess-the-label baselines: one positive per window, zeros elsewhere.

    mode "random" draws the positive position from the prior; "max_prior"
    places it at the largest prior weight (lowest position wins ties).
    Stream points covered by no window get label 0. Overlapping windows
    emit duplicate rows, conflicts included, each with unit weight.
    """
    if mode not in ("random", "max_prior"):
        raise DomainError(f"mode must be 'random' or 'max_prior', got {mode!r}")
    features = np.asarray(features)
    sets = list(sets)
    n = features.shape[0]
    argmax_pos = int(np.argmax(prior.weights)) + 1  # lowest position wins ties

    if mode == "random":
        ordinals = np.asarray([aset.j for aset in sets], dtype=np.int64)
        positions = _draw_positions(prior, seed, ordinals, _HALLUCINATION_STREAM)
    covered = np.zeros(n, dtype=bool)
    rows: list[np.ndarray] = []
    labels: list[np.ndarray] = []
    for s, aset in enumerate(sets):
        pos = int(positions[s]) if mode == "random" else argmax_pos
        y = np.zeros(aset.k, dtype=np.int8)
        y[pos - 1] = 1
        rows.append(aset.indices)
        labels.append(y)
        covered[aset.indices] = True
    uncovered = np.flatnonzero(~covered)
    rows.append(uncovered)
    labels.append(np.zeros(uncovered.size, dtype=np.int8))
    idx = np.concatenate(rows)
    return features[idx], np.concatenate(labels)


# ---------------------------------------------------------------------------
# Line-delimited record serialization.
#
# Learner-facing file: one header record {n, p_hat, k, prior}, then one
# record {j, start, indices} per attribution set. No label or true-position
# field ever appears here. The oracle-only file carries labels and the
# adversary's draws. Floats round-trip bit-exactly through json's repr
# formatting.
# ---------------------------------------------------------------------------


def _open(path_or_fp, mode) -> IO:
    if hasattr(path_or_fp, "write") or hasattr(path_or_fp, "read"):
        return path_or_fp
    return open(path_or_fp, mode)


def write_set_records(path, sets: Iterable[AttributionSet], n: int, p_hat: float,
                      prior: Prior) -> None:
    fp = _open(path, "w")
    header = {"n": int(n), "p_hat": float(p_hat), "k": prior.k,
              "prior": [float(w) for w in prior.weights]}
    fp.write(json.dumps(header) + "\n")
    for aset in sets:
        rec = {"j": aset.j, "start": aset.start,
               "indices": [int(t) for t in aset.indices]}
        fp.write(json.dumps(rec) + "\n")
    if fp is not path:
        fp.close()


def read_set_records(path) -> tuple[dict, list[AttributionSet]]:
    fp = _open(path, "r")
    lines = fp.read().splitlines()
    if fp is not path:
        fp.close()
    if not lines:
        raise DatasetError("empty attribution-set file")
    header = json.loads(lines[0])
    for key in ("n", "p_hat", "k", "prior"):
        if key not in header:
            raise DatasetError(f"set-file header missing {key!r}")
    header["prior"] = custom_prior(header["prior"])
    sets = []
    for line in lines[1:]:
        rec = json.loads(line)
        sets.append(AttributionSet(j=rec["j"], start=rec["start"],
                                   indices=np.asarray(rec["indices"])))
    return header, sets


def write_oracle_records(path, stream: LabeledStream,
                         sets: Iterable[AttributionSet]) -> None:
    """Simulator-private companion file: labels and true positions."""
    fp = _open(path, "w")
    fp.write(json.dumps({"n": stream.n, "labels": stream.labels.tolist()}) + "\n")
    for aset in sets:
        fp.write(json.dumps({"j": aset.j, "true_position": aset.true_position}) + "\n")
    if fp is not path:
        fp.close()


def read_oracle_records(path) -> tuple[np.ndarray, dict[int, int]]:
    fp = _open(path, "r")
    lines = fp.read().splitlines()
    if fp is not path:
        fp.close()
    header = json.loads(lines[0])
    labels = np.asarray(header["labels"], dtype=np.int8)
    positions = {}
    for line in lines[1:]:
        rec = json.loads(line)
        positions[rec["j"]] = rec["true_position"]
    return labels, positions
