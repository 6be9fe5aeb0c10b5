"""
Train/validation/test splitting with jumps, k-fold partitions and LSTM windowing.
"""
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, List, Sequence, Tuple

import numpy as np
import pandas as pd

from src.app.core.errors import InputError


@dataclass(frozen=True)
class SplitAssignment:
    train: Tuple[int, ...]
    val: Tuple[int, ...]
    test: Tuple[int, ...]
    jump: int
    observation_timesteps: Tuple[int, ...] = ()

    @property
    def total(self) -> int:
        return len(self.train) + len(self.val) + len(self.test)

    def label_of(self, t: int) -> str:
        for name in ("train", "val", "test"):
            if t in getattr(self, name):
                return name
        raise InputError(f"timestep {t} is not part of the split")

    def indices(self, name: str) -> Tuple[int, ...]:
        if name not in ("train", "val", "test"):
            raise InputError(f"unknown split set '{name}'")
        return getattr(self, name)

    def to_frame(self) -> pd.DataFrame:
        rows = [(t, self.label_of(t)) for t in range(self.total)]
        return pd.DataFrame(rows, columns=["timestep", "set"])

    def save_csv(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        self.to_frame().to_csv(path, index=False)
        return path


@dataclass(frozen=True)
class SequenceSample:
    inputs: np.ndarray
    target: np.ndarray
    target_index: int = field(default=-1)


def split(T: int, jump: int, obs_timesteps: Iterable[int] = ()) -> SplitAssignment:
    """
    Observation timesteps go to test first. The rest are scanned in order:
    two consecutive indices to train, then `jump` indices that alternate
    val, test, val, ... over the whole scan.
    """
    if T < 4:
        raise InputError(f"split needs T >= 4, got {T}")
    if jump < 1:
        raise InputError(f"jump must be >= 1, got {jump}")
    obs = sorted(set(int(t) for t in obs_timesteps))
    if any(t < 0 or t >= T for t in obs):
        raise InputError(f"observation timesteps {obs} fall outside [0, {T})")

    obs_set = set(obs)
    remaining = [t for t in range(T) if t not in obs_set]
    train, val, test = [], [], list(obs)
    next_is_val = True
    pos = 0
    while pos < len(remaining):
        train.extend(remaining[pos:pos + 2])
        pos += 2
        for t in remaining[pos:pos + jump]:
            (val if next_is_val else test).append(t)
            next_is_val = not next_is_val
        pos += jump

    if not train or not val or not test:
        raise InputError(f"T={T}, jump={jump} cannot populate train, val and test")
    return SplitAssignment(tuple(train), tuple(sorted(val)), tuple(sorted(test)), jump, tuple(obs))


def segments(indices: Sequence[int]) -> List[List[int]]:
    """Maximal runs of consecutive indices."""
    runs: List[List[int]] = []
    for t in sorted(indices):
        if runs and t == runs[-1][-1] + 1:
            runs[-1].append(t)
        else:
            runs.append([t])
    return runs


def window(series: np.ndarray, q: int, offset: int = 0) -> List[SequenceSample]:
    """Sample i uses positions [i, i+q) as input and i+q as target."""
    series = np.asarray(series, dtype=np.float64)
    if q < 1:
        raise InputError(f"window length q must be >= 1, got {q}")
    if len(series) < q + 1:
        raise InputError(f"series of length {len(series)} is too short for q={q}")
    return [
        SequenceSample(inputs=series[i:i + q].copy(), target=series[i + q].copy(), target_index=offset + i + q)
        for i in range(len(series) - q)
    ]


def windows_by_segment(latents: np.ndarray, indices: Sequence[int], q: int) -> List[SequenceSample]:
    """
    Windows built inside each maximal consecutive run of `indices`, never
    across a gap. `latents` is indexed by timestep. Runs shorter than q+1 are skipped.
    """
    samples: List[SequenceSample] = []
    for run in segments(indices):
        if len(run) >= q + 1:
            samples.extend(window(latents[run[0]:run[-1] + 1], q, offset=run[0]))
    return samples


def target_windows(latents: np.ndarray, targets: Iterable[int], q: int) -> List[SequenceSample]:
    """
    Windows over the contiguous trajectory whose target timestep is in `targets`.
    Targets with fewer than q predecessors are skipped.
    """
    latents = np.asarray(latents, dtype=np.float64)
    return [
        SequenceSample(inputs=latents[t - q:t].copy(), target=latents[t].copy(), target_index=t)
        for t in sorted(set(targets)) if q <= t < len(latents)
    ]


def stack_samples(samples: Sequence[SequenceSample]) -> Tuple[np.ndarray, np.ndarray]:
    """(N, q, p) inputs and (N, p) targets."""
    if not samples:
        raise InputError("no sequence samples to stack")
    return np.stack([s.inputs for s in samples]), np.stack([s.target for s in samples])


def kfold(indices: Sequence[int], k: int, seed: int) -> List[Tuple[List[int], List[int]]]:
    """One seeded shuffle, then k balanced holdouts (sizes differ by at most one)."""
    indices = list(indices)
    if k < 2:
        raise InputError(f"k must be >= 2, got {k}")
    if k > len(indices):
        raise InputError(f"k={k} exceeds the {len(indices)} available indices")
    rng = np.random.default_rng(seed)
    shuffled = [indices[i] for i in rng.permutation(len(indices))]
    folds = []
    for holdout in np.array_split(np.arange(len(shuffled)), k):
        held = set(holdout.tolist())
        folds.append((
            [shuffled[i] for i in range(len(shuffled)) if i not in held],
            [shuffled[i] for i in holdout],
        ))
    return folds
