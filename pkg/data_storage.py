"""
On-disk layout of synthetic datasets and experiment outputs.

A dataset directory holds::

    manifest.txt            one case id per line
    split.txt               ``<split> <case_id>`` per line (train / val / test)
    config.txt              effective run config
    metadata.json           counts and centerline size range
    cases/<id>/volume.vol
    cases/<id>/centerline.txt
"""

from __future__ import annotations

import json
import logging
import shutil
from pathlib import Path

import pandas as pd

from errors import DataError, UsageError
from volume_io import DatasetCase, load_centerline, load_volume, save_centerline, save_volume

logger = logging.getLogger(__name__)

SPLIT_NAMES = ("train", "val", "test")
MANIFEST = "manifest.txt"
SPLIT_FILE = "split.txt"
METADATA = "metadata.json"
CASES_DIR = "cases"
VOLUME_FILE = "volume.vol"
CENTERLINE_FILE = "centerline.txt"

# fixed float text so reruns are byte-identical
CSV_FLOAT_FORMAT = "%.6f"

# files next to centerline outputs that are not centerlines
SIDECAR_SUFFIXES = (".report.txt", ".config.txt", ".votes.txt")


def ensure_output_directory(path, force=False):
    """Create path; refuse a non-empty existing directory unless force"""
    path = Path(path)
    if path.exists() and not path.is_dir():
        raise UsageError(f"{path} exists and is not a directory")
    if path.is_dir() and any(path.iterdir()) and not force:
        raise UsageError(f"{path} is not empty; pass --force to overwrite")
    path.mkdir(parents=True, exist_ok=True)
    return path


def ensure_parent(path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def refuse_existing(path, force=False):
    """Single-file outputs follow the same --force rule as directories"""
    path = Path(path)
    if path.exists() and not force:
        raise UsageError(f"{path} already exists; pass --force to overwrite")
    return ensure_parent(path)


def save_table(df: pd.DataFrame, path):
    """CSV without index, fixed float formatting"""
    path = ensure_parent(path)
    df.to_csv(path, index=False, float_format=CSV_FLOAT_FORMAT, lineterminator="\n")
    return path


class DatasetStorage:
    def __init__(self, root):
        self.root = Path(root)

    def case_dir(self, case_id):
        return self.root / CASES_DIR / case_id

    def save_case(self, case: DatasetCase):
        """Write one case's volume and centerline"""
        directory = self.case_dir(case.id)
        directory.mkdir(parents=True, exist_ok=True)
        save_volume(case.volume, directory / VOLUME_FILE)
        save_centerline(case.centerline, directory / CENTERLINE_FILE)

    def save_dataset(self, cases, splits, config=None):
        """Cases, manifest, split file, metadata and (optionally) the effective config; replaces any earlier cases"""
        stale = self.root / CASES_DIR
        if stale.is_dir():
            logger.debug(f"removing previous cases under {stale}")
            shutil.rmtree(stale)
        for case in cases:
            self.save_case(case)
        (self.root / MANIFEST).write_text("".join(f"{c.id}\n" for c in cases), encoding="ascii")

        lines = []
        for name, members in zip(SPLIT_NAMES, splits):
            lines.extend(f"{name} {c.id}\n" for c in sorted(members, key=lambda c: c.id))
        (self.root / SPLIT_FILE).write_text("".join(lines), encoding="ascii")

        sizes = [len(c.centerline) for c in cases]
        self.save_metadata({
            "n_cases": len(cases),
            "dims": list(cases[0].volume.dims),
            "split_sizes": {name: len(m) for name, m in zip(SPLIT_NAMES, splits)},
            "centerline_size_min": min(sizes),
            "centerline_size_max": max(sizes),
        })
        if config is not None:
            config.write(self.root)
        logger.info(f"wrote {len(cases)} cases to {self.root}")

    def save_metadata(self, metadata):
        path = self.root / METADATA
        with open(path, "w", encoding="ascii") as f:
            json.dump(metadata, f, indent=2, sort_keys=True)
            f.write("\n")
        return path

    def load_metadata(self):
        path = self.root / METADATA
        if path.exists():
            with open(path, encoding="ascii") as f:
                return json.load(f)
        return None

    def case_ids(self):
        path = self.root / MANIFEST
        if not path.exists():
            raise DataError(f"{self.root} has no {MANIFEST}; not a dataset directory")
        return [line.strip() for line in path.read_text(encoding="ascii").splitlines() if line.strip()]

    def load_split(self):
        """{split name: [case ids]}; a missing or malformed split file is a data error"""
        path = self.root / SPLIT_FILE
        if not path.exists():
            raise DataError(f"{self.root} has no {SPLIT_FILE}")
        splits = {name: [] for name in SPLIT_NAMES}
        for lineno, line in enumerate(path.read_text(encoding="ascii").splitlines(), start=1):
            if not line.strip():
                continue
            parts = line.split()
            if len(parts) != 2 or parts[0] not in splits:
                raise DataError(f"{path}:{lineno}: expected '<train|val|test> <case_id>', got {line!r}")
            splits[parts[0]].append(parts[1])
        return splits

    def load_case(self, case_id):
        directory = self.case_dir(case_id)
        if not directory.is_dir():
            raise DataError(f"case {case_id} missing under {self.root / CASES_DIR}")
        return DatasetCase(
            case_id, load_volume(directory / VOLUME_FILE), load_centerline(directory / CENTERLINE_FILE)
        )

    def load_cases(self, case_ids):
        return [self.load_case(i) for i in case_ids]

    def load_split_cases(self, name):
        if name not in SPLIT_NAMES:
            raise UsageError(f"unknown split {name!r}; expected one of {', '.join(SPLIT_NAMES)}")
        return self.load_cases(self.load_split()[name])


def list_centerline_files(directory):
    """{case id: path} for every ``*.txt`` centerline file directly in directory"""
    directory = Path(directory)
    if not directory.is_dir():
        raise DataError(f"{directory} is not a directory")
    return {
        p.stem: p for p in sorted(directory.glob("*.txt"))
        if not p.name.endswith(SIDECAR_SUFFIXES) and p.name != "config.txt"
    }


def ground_truth_files(directory, split="all"):
    """{case id: path} from a dataset directory (one split, or all) or a flat ``<id>.txt`` directory"""
    directory = Path(directory)
    if (directory / CASES_DIR).is_dir():
        storage = DatasetStorage(directory)
        ids = storage.case_ids() if split == "all" else storage.load_split()[split]
        return {i: storage.case_dir(i) / CENTERLINE_FILE for i in sorted(ids)}
    return list_centerline_files(directory)
