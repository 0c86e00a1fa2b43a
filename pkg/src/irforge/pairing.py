"""Per-location image pools and seeded source/target pair manifests."""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence, Union

import numpy as np

from .errors import EmptyPool, MalformedFile, MissingRoot, ModalityUnavailable, UnknownTask

log = logging.getLogger(__name__)

MODALITIES = ("rgb", "ir", "sar", "eo")

# task -> (source modality, target modality)
TASK_MODALITIES = {
    "SAR2EO": ("sar", "eo"),
    "SAR2RGB": ("sar", "rgb"),
    "RGB2IR": ("rgb", "ir"),
    "SAR2IR": ("sar", "ir"),
}

MANIFEST_MAGIC = "#irforge-manifest v1"
ALL = "all"


def normalize_task(task: str) -> str:
    key = task.upper()
    if key not in TASK_MODALITIES:
        raise UnknownTask(f"unknown task {task!r}; expected one of {sorted(TASK_MODALITIES)}")
    return key


@dataclass(frozen=True)
class LocationPool:
    location_id: str
    rgb: tuple = ()
    ir: tuple = ()
    sar: tuple = ()
    eo: tuple = ()

    def images(self, modality: str) -> tuple:
        return getattr(self, modality)


@dataclass(frozen=True)
class PairRecord:
    source: str
    target: str
    location_id: str


@dataclass(frozen=True)
class PairManifest:
    task: str
    seed: int
    records: tuple = field(default_factory=tuple)

    def to_text(self) -> str:
        lines = [f"{MANIFEST_MAGIC} seed={self.seed}"]
        for r in self.records:
            for value in (r.location_id, r.source, r.target):
                if any(c in value for c in "\t\r\n"):
                    raise ValueError(f"manifest field contains a tab or newline: {value!r}")
            lines.append(f"{self.task}\t{r.location_id}\t{r.source}\t{r.target}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "PairManifest":
        lines = text.splitlines()
        if not lines or not lines[0].startswith(MANIFEST_MAGIC + " seed="):
            raise MalformedFile("missing irforge manifest header")
        try:
            seed = int(lines[0][len(MANIFEST_MAGIC) + len(" seed="):])
        except ValueError:
            raise MalformedFile(f"bad manifest seed in {lines[0]!r}") from None
        task = None
        records = []
        for n, line in enumerate(lines[1:], start=2):
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 4:
                raise MalformedFile(f"manifest line {n}: expected 4 tab-separated fields")
            line_task = normalize_task(parts[0])
            if task is None:
                task = line_task
            elif line_task != task:
                raise MalformedFile(f"manifest line {n}: mixed tasks {task} and {line_task}")
            records.append(PairRecord(source=parts[2], target=parts[3], location_id=parts[1]))
        if not records:
            raise MalformedFile("manifest has no records")
        return cls(task=task, seed=seed, records=tuple(records))


def _is_listed(p: Path) -> bool:
    return p.is_file() and not p.name.startswith(".")


def scan_locations(root: Union[str, Path], required: Optional[Sequence[str]] = None) -> list[LocationPool]:
    """Index ``<root>/<location_id>/<modality>/<file>``.

    Locations missing any modality in ``required`` are logged and skipped.
    Everything is sorted so the result does not depend on directory order.
    """
    root = Path(root)
    if not root.is_dir():
        raise MissingRoot(f"dataset root {str(root)!r} does not exist")
    required = tuple(required or ())
    pools = []
    for loc in sorted(p for p in root.iterdir() if p.is_dir() and not p.name.startswith(".")):
        lists = {}
        for modality in MODALITIES:
            mdir = loc / modality
            files = sorted(mdir.iterdir()) if mdir.is_dir() else []
            lists[modality] = tuple(str(p) for p in files if _is_listed(p))
        missing = [m for m in required if not lists[m]]
        if missing:
            log.warning("skipping location %s: no %s images", loc.name, "/".join(missing))
            continue
        pools.append(LocationPool(location_id=loc.name, **lists))
    if not pools:
        log.warning("no usable locations under %s", root)
    return pools


def location_rng(seed: int, location_id: str) -> np.random.Generator:
    """Counter-based (Philox) generator keyed by (seed, location)."""
    digest = hashlib.blake2b(
        f"{seed & 0xFFFFFFFFFFFFFFFF}\0{location_id}".encode("utf-8"), digest_size=16).digest()
    key = np.frombuffer(digest, dtype="<u8").astype(np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def _aligned(sources: Iterable[str], targets: Iterable[str]) -> list[tuple[str, str]]:
    by_stem = {}
    for t in targets:
        by_stem.setdefault(Path(t).stem, t)
    return [(s, by_stem[Path(s).stem]) for s in sources if Path(s).stem in by_stem]


def sample_pairs(pools: Sequence[LocationPool], task: str, pairs_per_location, seed: int) -> PairManifest:
    """Draw source/target pairs inside each location.

    Each record samples its source and target uniformly, independently and with
    replacement. ``pairs_per_location="all"`` instead pairs every source with
    the target sharing its filename stem.
    """
    task = normalize_task(task)
    src_mod, tgt_mod = TASK_MODALITIES[task]
    exhaustive = pairs_per_location == ALL
    if not exhaustive:
        pairs_per_location = int(pairs_per_location)
        if pairs_per_location < 1:
            raise ValueError("pairs_per_location must be >= 1")
    records = []
    for pool in sorted(pools, key=lambda p: p.location_id):
        sources, targets = pool.images(src_mod), pool.images(tgt_mod)
        if not sources or not targets:
            raise ModalityUnavailable(
                f"location {pool.location_id} lacks {src_mod if not sources else tgt_mod} images")
        if exhaustive:
            pairs = _aligned(sources, targets)
            if not pairs:
                raise ModalityUnavailable(
                    f"location {pool.location_id} has no {src_mod}/{tgt_mod} files with matching stems")
        else:
            rng = location_rng(seed, pool.location_id)
            pairs = []
            for _ in range(pairs_per_location):
                s = int(rng.integers(len(sources)))
                t = int(rng.integers(len(targets)))
                pairs.append((sources[s], targets[t]))
        records += [PairRecord(s, t, pool.location_id) for s, t in pairs]
    if not records:
        raise EmptyPool("no locations to sample from")
    return PairManifest(task=task, seed=seed, records=tuple(records))


def write_manifest(path: Union[str, Path], manifest: PairManifest) -> None:
    Path(path).write_text(manifest.to_text(), encoding="utf-8", newline="\n")


def read_manifest(path: Union[str, Path]) -> PairManifest:
    return PairManifest.from_text(Path(path).read_text(encoding="utf-8"))
