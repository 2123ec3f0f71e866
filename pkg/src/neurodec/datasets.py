"""Datasets, trial bookkeeping and split construction.

A trial id is the position of a :class:`TrialRecord` in the list handed to
the split functions. Every sampler orders trials by
``(image_id, subject_id, repetition_index)`` before drawing from a seeded
generator, so results do not depend on input order or platform.
"""

from __future__ import annotations

import csv
import enum
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ContractViolation
from .scaling import HOURLY_COST_USD

TRIAL_CSV_HEADER = (
    "subject_id",
    "image_id",
    "category_id",
    "repetition_index",
    "session_id",
    "onset_time",
)


class DeviceKind(str, enum.Enum):
    EEG = "eeg"
    MEG = "meg"
    FMRI3T = "fmri3t"
    FMRI7T = "fmri7t"

    @property
    def is_fmri(self) -> bool:
        return self in (DeviceKind.FMRI3T, DeviceKind.FMRI7T)


@dataclass(frozen=True)
class DatasetSpec:
    name: str
    device: DeviceKind
    num_subjects: int
    channels: int
    soa_seconds: float
    epoch_window: tuple[float, float]
    sampling_rate: float | None = None
    tr_seconds: float | None = None
    hourly_cost_usd: float | None = None
    baseline: tuple[float, float] | None = None
    train_valid_trials: int | None = None
    matched_train_valid_trials: int | None = None
    test_unique_images: int = 100

    def __post_init__(self):
        if self.soa_seconds <= 0:
            raise ContractViolation(f"{self.name}: soa_seconds must be > 0")
        if not self.epoch_window[0] < self.epoch_window[1]:
            raise ContractViolation(f"{self.name}: epoch_window start must precede end")
        if self.channels <= 0:
            raise ContractViolation(f"{self.name}: channels must be > 0")
        if self.hourly_cost_usd is None:
            object.__setattr__(self, "hourly_cost_usd", HOURLY_COST_USD[self.device.value])


def _meeg(name, device, subjects, channels, t0, soa, trials, matched, baseline=None):
    return DatasetSpec(
        name=name,
        device=device,
        num_subjects=subjects,
        channels=channels,
        soa_seconds=soa,
        epoch_window=(t0, 1.0),
        sampling_rate=120.0,
        baseline=baseline if baseline is not None else (t0, 0.0),
        train_valid_trials=trials,
        matched_train_valid_trials=matched,
    )


def _fmri(name, device, subjects, tr, window, soa, trials, matched, test_unique=100):
    return DatasetSpec(
        name=name,
        device=device,
        num_subjects=subjects,
        channels=20484,
        soa_seconds=soa,
        epoch_window=window,
        tr_seconds=tr,
        train_valid_trials=trials,
        matched_train_valid_trials=matched,
        test_unique_images=test_unique,
    )


# Trial counts are train+valid presentations (all-trials / matched-trials).
DATASETS: dict[str, DatasetSpec] = {
    d.name: d
    for d in (
        _meeg("Xu2024", DeviceKind.EEG, 8, 64, -0.3, 0.6, 34_868, 34_868, baseline=(-0.05, 0.0)),
        _meeg("Grootswagers2022", DeviceKind.EEG, 48, 64, -0.1, 0.1, 943_892, 353_172),
        _meeg("Gifford2022", DeviceKind.EEG, 10, 64, -0.2, 0.2, 668_400, 300_145),
        _meeg("Hebart2023meg", DeviceKind.MEG, 4, 272, -0.5, 1.6, 79_392, 29_712),
        _fmri("Shen2019", DeviceKind.FMRI3T, 3, 2.0, (3.0, 13.0), 8.0, 19_800, 19_800, test_unique=50),
        _fmri("Hebart2023fmri", DeviceKind.FMRI3T, 3, 1.5, (3.0, 10.5), 4.5, 22_284, 22_284),
        _fmri("Chang2019", DeviceKind.FMRI3T, 4, 2.0, (3.0, 13.0), 10.0, 17_255, 17_255),
        _fmri("Allen2022", DeviceKind.FMRI7T, 4, 1.6, (3.0, 11.0), 4.0, 108_000, 89_136),
    )
}


@dataclass(frozen=True, order=True)
class TrialRecord:
    subject_id: int
    image_id: int
    category_id: int
    repetition_index: int = 1
    session_id: int = 0
    onset_time: float = 0.0

    def __post_init__(self):
        if self.repetition_index < 1:
            raise ContractViolation("repetition_index must be >= 1")


@dataclass
class SplitAssignment:
    train: list[int] = field(default_factory=list)
    valid: list[int] = field(default_factory=list)
    test: list[int] = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps({k: sorted(v) for k, v in asdict(self).items()}, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "SplitAssignment":
        raw = json.loads(text)
        return cls(**{k: [int(i) for i in raw.get(k, [])] for k in ("train", "valid", "test")})

    def check(self, trials: Sequence[TrialRecord], test_categories: Iterable[int] = ()) -> None:
        """Raise :class:`ContractViolation` if the split leaks across partitions."""
        tr, va, te = set(self.train), set(self.valid), set(self.test)
        if tr & va or tr & te or va & te:
            raise ContractViolation("split partitions must be pairwise disjoint")
        fit_images = {trials[i].image_id for i in tr | va}
        if fit_images & {trials[i].image_id for i in te}:
            raise ContractViolation("an image_id appears in both train/valid and test")
        cats = set(test_categories)
        if cats and {trials[i].category_id for i in tr | va} & cats:
            raise ContractViolation("a test category leaked into train/valid")


def _ordered(trials: Sequence[TrialRecord], ids: Iterable[int] | None = None) -> list[int]:
    ids = range(len(trials)) if ids is None else ids
    return sorted(
        ids,
        key=lambda i: (trials[i].image_id, trials[i].subject_id, trials[i].repetition_index, i),
    )


def check_unique_presentations(trials: Sequence[TrialRecord]) -> None:
    seen = set()
    for t in trials:
        key = (t.subject_id, t.image_id, t.repetition_index)
        if key in seen:
            raise ContractViolation(f"duplicate (subject, image, repetition) {key}")
        seen.add(key)


def make_splits(
    trials: Sequence[TrialRecord],
    test_categories: Iterable[int],
    valid_fraction: float = 0.2,
    seed: int = 0,
) -> SplitAssignment:
    """Split trials into train/valid/test without category leakage.

    Every trial whose category is in ``test_categories`` goes to test; the
    remaining trials form train+valid, of which ``floor(valid_fraction * n)``
    trials (sampled at trial level) form the validation set.
    """
    test_categories = set(test_categories)
    if not test_categories:
        raise ContractViolation("test_categories must be nonempty")
    if not 0.0 < valid_fraction < 1.0:
        raise ContractViolation("valid_fraction must lie in (0, 1)")

    test = [i for i, t in enumerate(trials) if t.category_id in test_categories]
    fit = _ordered(trials, (i for i, t in enumerate(trials) if t.category_id not in test_categories))
    n_valid = math.floor(valid_fraction * len(fit))
    if len(fit) - n_valid <= 0:
        raise ContractViolation("train set is empty after removing test categories")

    rng = np.random.default_rng(seed)
    perm = rng.permutation(len(fit))
    valid = sorted(fit[j] for j in perm[:n_valid])
    train = sorted(fit[j] for j in perm[n_valid:])
    return SplitAssignment(train=train, valid=valid, test=sorted(test))


def subsample_test(
    trials: Sequence[TrialRecord],
    n_unique: int,
    seed: int = 0,
    ids: Iterable[int] | None = None,
) -> list[int]:
    """Keep ``n_unique`` randomly chosen test images with all their repetitions.

    ``ids`` restricts the pool (typically ``split.test``); default is all trials.
    """
    pool = _ordered(trials, ids)
    images = sorted({trials[i].image_id for i in pool})
    if len(images) < n_unique:
        raise ContractViolation(
            f"test set has {len(images)} unique images, fewer than requested {n_unique}"
        )
    rng = np.random.default_rng(seed)
    keep = {images[j] for j in rng.choice(len(images), size=n_unique, replace=False)}
    return sorted(i for i in pool if trials[i].image_id in keep)


def matched_trials(
    dataset: DatasetSpec | None,
    trials: Sequence[TrialRecord],
    target_unique: int,
    seed: int = 0,
    ids: Iterable[int] | None = None,
) -> list[int]:
    """Downsample training trials to roughly ``target_unique`` single presentations.

    Three regimes:

    * at most ``target_unique`` unique images available: keep everything;
    * images shared across subjects: draw ``target_unique`` images once, then
      one presentation of each per subject;
    * each subject saw its own images: draw ``target_unique`` images per
      subject, one presentation each.

    ``dataset`` is accepted for bookkeeping only; the regime is read off the
    trials themselves.
    """
    if target_unique <= 0:
        raise ContractViolation("target_unique must be > 0")
    pool = _ordered(trials, ids)
    rng = np.random.default_rng(seed)

    by_image: dict[int, set[int]] = {}
    for i in pool:
        by_image.setdefault(trials[i].image_id, set()).add(trials[i].subject_id)
    if len(by_image) <= target_unique:
        return sorted(pool)

    # (subject, image) -> presentation ids
    groups: dict[tuple[int, int], list[int]] = {}
    for i in pool:
        groups.setdefault((trials[i].subject_id, trials[i].image_id), []).append(i)

    shared = any(len(subjects) > 1 for subjects in by_image.values())
    chosen: list[int] = []
    if shared:
        images = sorted(by_image)
        picked = sorted(images[j] for j in rng.choice(len(images), size=target_unique, replace=False))
        subjects = sorted({trials[i].subject_id for i in pool})
        for s in subjects:
            for img in picked:
                presentations = groups.get((s, img))
                if presentations:
                    chosen.append(presentations[rng.integers(len(presentations))])
    else:
        subjects = sorted({trials[i].subject_id for i in pool})
        for s in subjects:
            images = sorted(img for (subj, img) in groups if subj == s)
            n = min(target_unique, len(images))
            for j in sorted(rng.choice(len(images), size=n, replace=False)):
                presentations = groups[(s, images[j])]
                chosen.append(presentations[rng.integers(len(presentations))])
    return sorted(chosen)


def inner_category_split(
    trials: Sequence[TrialRecord],
    ids: Iterable[int],
    fraction: float = 0.2,
    seed: int = 0,
) -> tuple[list[int], list[int]]:
    """Carve ``fraction`` of the categories in ``ids`` out as an inner test set.

    Used by hyperparameter search; returns ``(inner_train, inner_test)``.
    """
    ids = _ordered(trials, ids)
    categories = sorted({trials[i].category_id for i in ids})
    n_test = max(1, math.floor(fraction * len(categories)))
    if n_test >= len(categories):
        raise ContractViolation("need at least two categories for an inner split")
    rng = np.random.default_rng(seed)
    held = {categories[j] for j in rng.choice(len(categories), size=n_test, replace=False)}
    inner_test = [i for i in ids if trials[i].category_id in held]
    inner_train = [i for i in ids if trials[i].category_id not in held]
    return sorted(inner_train), sorted(inner_test)


def write_trials_csv(trials: Sequence[TrialRecord], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(TRIAL_CSV_HEADER)
        for t in trials:
            writer.writerow(
                [t.subject_id, t.image_id, t.category_id, t.repetition_index, t.session_id, repr(float(t.onset_time))]
            )


def read_trials_csv(path: str | Path) -> list[TrialRecord]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != TRIAL_CSV_HEADER:
            raise ContractViolation(f"trial table header must be {','.join(TRIAL_CSV_HEADER)}")
        return [
            TrialRecord(
                subject_id=int(row["subject_id"]),
                image_id=int(row["image_id"]),
                category_id=int(row["category_id"]),
                repetition_index=int(row["repetition_index"]),
                session_id=int(row["session_id"]),
                onset_time=float(row["onset_time"]),
            )
            for row in reader
        ]
