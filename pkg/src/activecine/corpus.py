"""
Seeded phantom corpora written as containers plus a JSON index.

Each subject is drawn from a cohort (a tag and an EF range). The LV and RV
EF targets are both drawn from the cohort range; LV radius and wall
thickness are drawn from shared ranges. Subjects are assigned to cohorts
round-robin, so a two-cohort corpus of 20 has 10 of each.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from activecine.container import CineContainer, atomic_write_text, save_container
from activecine.phantom import PhantomParams, generate_phantom

INDEX_NAME = "index.json"
INDEX_VERSION = 1


@dataclass(frozen=True)
class Cohort:
    tag: str
    ef_range: tuple

    def __post_init__(self):
        lo, hi = self.ef_range
        if not 0 < lo <= hi < 1:
            raise ValueError(f"cohort {self.tag!r}: EF range must satisfy 0 < lo <= hi < 1, got {self.ef_range}")

    @classmethod
    def parse(cls, text):
        """'TAG:LO:HI', e.g. 'healthy:0.55:0.70'."""
        parts = str(text).split(":")
        if len(parts) != 3 or not parts[0]:
            raise ValueError(f"cohort must be TAG:LO:HI, got {text!r}")
        return cls(parts[0], (float(parts[1]), float(parts[2])))


DEFAULT_COHORTS = (Cohort("disease", (0.25, 0.45)), Cohort("healthy", (0.55, 0.70)))


@dataclass(frozen=True)
class ParamRanges:
    lv_radius: tuple = (11.0, 16.0)
    wall_thickness: tuple = (3.5, 5.0)
    nx: int = 96
    ny: int = 96
    nt: int = 50


def subject_id(i):
    return f"subj-{i:03d}"


def sample_params(rng, cohort, ranges=ParamRanges(), seed=0):
    return PhantomParams(
        nx=ranges.nx, ny=ranges.ny, nt=ranges.nt,
        lv_radius=float(rng.uniform(*ranges.lv_radius)),
        lv_ef=float(rng.uniform(*cohort.ef_range)),
        rv_ef=float(rng.uniform(*cohort.ef_range)),
        wall_thickness=float(rng.uniform(*ranges.wall_thickness)),
        seed=int(seed),
    )


def corpus_params(count, seed=0, cohorts=DEFAULT_COHORTS, ranges=ParamRanges()):
    """[(subject id, cohort tag, PhantomParams)] for a corpus; deterministic per seed."""
    if count < 1:
        raise ValueError(f"corpus needs at least one subject, got count {count}")
    if not cohorts:
        raise ValueError("need at least one cohort")
    rng = np.random.default_rng(seed)
    out = []
    for i in range(count):
        cohort = cohorts[i % len(cohorts)]
        phantom_seed = int(rng.integers(2**31))
        out.append((subject_id(i), cohort.tag, sample_params(rng, cohort, ranges, phantom_seed)))
    return out


def subject_container(sid, tag, params):
    image, truth = generate_phantom(params)
    attrs = {
        "subject": sid, "tag": tag, "seed": params.seed,
        "center": list(truth.center), "max_radius": truth.max_radius,
        "biomarkers": truth.biomarkers.to_dict(), "phantom": params.to_dict(),
    }
    arrays = {"image": image.data.astype(np.float32), "labels": truth.labels.astype(np.uint8)}
    return CineContainer(arrays, params.dx, params.dy, params.thickness, attrs=attrs)


def generate_corpus(out_dir, count, seed=0, cohorts=DEFAULT_COHORTS, ranges=ParamRanges()):
    """Write one container per subject and the index; returns the index dict."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for sid, tag, params in corpus_params(count, seed, cohorts, ranges):
        name = f"{sid}.acine"
        save_container(out_dir / name, subject_container(sid, tag, params))
        entries.append({"subject": sid, "file": name, "tag": tag,
                        "lv_ef_target": params.lv_ef, "rv_ef_target": params.rv_ef})
    index = {
        "format_version": INDEX_VERSION, "seed": seed, "count": count,
        "cohorts": [{"tag": c.tag, "ef_range": list(c.ef_range)} for c in cohorts],
        "subjects": entries,
    }
    atomic_write_text(out_dir / INDEX_NAME, json.dumps(index, indent=2, sort_keys=True) + "\n")
    return index


def load_index(corpus_dir):
    path = Path(corpus_dir) / INDEX_NAME
    if not path.exists():
        raise FileNotFoundError(f"corpus index not found: {path}")
    index = json.loads(path.read_text())
    if index.get("format_version") != INDEX_VERSION:
        raise ValueError(f"{path}: unsupported index version {index.get('format_version')!r}")
    return index
