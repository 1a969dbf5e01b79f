"""Cross-validation folds stratified by scene and grouped by background location."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np


class FoldError(ValueError):
    pass


@dataclass
class FoldSplit:
    fold_id: int
    train: list
    validation: list
    test: list


def make_folds(records, k: int = 5, seed: int = 0, validation_fraction: float = 0.125):
    """Split recordings into ``k`` folds.

    ``records`` are mappings with ``id``, ``scene_class`` and ``location_id``
    and optionally ``group_id`` (recordings derived from one base scene).
    Locations of every scene class are dealt round-robin to test folds, so
    each fold gets the same number of locations per class and no location is
    on both sides of a train/test split. From each fold's training portion,
    ``validation_fraction`` of the base-scene groups of every class is held
    out for validation.
    """
    records = list(records)
    rng = np.random.default_rng(seed)
    by_class: dict[str, list[str]] = {}
    for r in records:
        locs = by_class.setdefault(r["scene_class"], [])
        if r["location_id"] not in locs:
            locs.append(r["location_id"])

    location_fold: dict[str, int] = {}
    for scene in sorted(by_class):
        locations = sorted(by_class[scene])
        if len(locations) < k:
            raise FoldError(
                f"scene {scene!r} has {len(locations)} locations, fewer than {k} folds"
            )
        order = rng.permutation(len(locations))
        offset = int(rng.integers(k))
        for rank, idx in enumerate(order):
            location_fold[locations[idx]] = (rank + offset) % k

    folds = []
    for fold in range(k):
        test = [r["id"] for r in records if location_fold[r["location_id"]] == fold]
        train_part = [r for r in records if location_fold[r["location_id"]] != fold]
        val_groups = set()
        for scene in sorted(by_class):
            groups = sorted({r.get("group_id", r["id"]) for r in train_part
                             if r["scene_class"] == scene})
            n_val = max(1, int(round(validation_fraction * len(groups)))) if validation_fraction > 0 else 0
            if n_val >= len(groups):
                raise FoldError(f"scene {scene!r} has too few groups for a validation split")
            picked = rng.choice(len(groups), size=n_val, replace=False)
            val_groups.update(groups[i] for i in sorted(picked))
        validation = [r["id"] for r in train_part if r.get("group_id", r["id"]) in val_groups]
        train = [r["id"] for r in train_part if r.get("group_id", r["id"]) not in val_groups]
        folds.append(FoldSplit(fold, train, validation, test))
    return folds


def write_folds(folds, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps([asdict(f) for f in folds], indent=1) + "\n")
    return path


def read_folds(path) -> list[FoldSplit]:
    return [FoldSplit(**d) for d in json.loads(Path(path).read_text())]
