"""
TOTO and LOTO split manifests.

Randomness comes from numpy's PCG64 bit generator seeded through a
SeedSequence built from (seed, protocol, team), so a fold's membership does
not depend on which other folds are generated or on the platform.
Shuffles run over sorted ids.
"""

import hashlib
import math
from typing import Dict, Hashable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from ..core.errors import DedupRequiredError, SplitError
from ..core.events import EventBus, Event, WARNING
from ..core.models import Catalog, PipelineWarning, Protocol, SplitManifest, TeamId
from ..utils.logging import get_logger
from ..utils.validation import validate_open_fraction
from .dedup import cross_team_collisions

logger = get_logger(__name__)

DEFAULT_TRAIN_FRAC = 0.7


def _label_entropy(label: str) -> int:
    return int.from_bytes(hashlib.sha256(label.encode("utf-8")).digest()[:8], "big")


def make_rng(seed: int, *labels: str) -> np.random.Generator:
    """PCG64 generator keyed by an integer seed plus string labels."""
    entropy = [seed & 0xFFFFFFFFFFFFFFFF] + [_label_entropy(label) for label in labels]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))


def partition_size(n: int, frac: float) -> int:
    """Size of the first part: round(frac * n), kept within [1, n-1] when n >= 2."""
    if n <= 1:
        return n
    k = int(math.floor(frac * n + 0.5))
    return min(max(k, 1), n - 1)


def stratified_partition(
    strata: Mapping[Hashable, Sequence[str]], frac: float, rng: np.random.Generator
) -> Tuple[List[str], List[str]]:
    """
    Split every stratum independently into (part_a, part_b).

    Strata are visited in sorted key order; each is shuffled with rng and the
    first round(frac * n) ids go to part_a. Both parts are returned sorted.
    """
    if not strata:
        raise SplitError("cannot partition an empty strata map")
    if not validate_open_fraction(frac):
        raise SplitError(f"frac must lie strictly between 0 and 1, got {frac}")
    part_a: List[str] = []
    part_b: List[str] = []
    for key in sorted(strata):
        ids = sorted(strata[key])
        if not ids:
            continue
        order = rng.permutation(len(ids))
        shuffled = [ids[i] for i in order]
        k = partition_size(len(ids), frac)
        part_a.extend(shuffled[:k])
        part_b.extend(shuffled[k:])
    return sorted(part_a), sorted(part_b)


class SplitGenerator:
    """Generates TOTO and LOTO manifests from a deduplicated catalog."""

    def __init__(self, event_bus: Optional[EventBus] = None):
        self.event_bus = event_bus or EventBus()
        self.manifests_generated = 0

    def _eligible(self, catalog: Catalog) -> Catalog:
        collisions = cross_team_collisions(catalog)
        if collisions:
            first = next(iter(collisions))
            raise DedupRequiredError(
                f"catalog holds {len(collisions)} perceptual hashes shared across teams "
                f"(e.g. {first:016x} in {', '.join(collisions[first])}); run dedup before split"
            )
        readable = Catalog([r for r in catalog if r.readable])
        if len(readable) < len(catalog):
            self._warn(
                "unreadable_excluded",
                f"{len(catalog) - len(readable)} unreadable records excluded from splits",
                None,
            )
        if len(readable.teams) < 2:
            raise SplitError(f"cross-team splits need at least 2 teams, found {len(readable.teams)}")
        return readable

    def _team_strata(self, catalog: Catalog, team: TeamId) -> Dict[str, List[str]]:
        strata = {}
        for label in catalog.classes:
            ids = catalog.cell_index.get((team, label), [])
            if not ids:
                self._warn("empty_cell", f"team {team} has no {label} images; cell skipped", f"{team}/{label}")
                continue
            strata[label] = ids
        return strata

    def toto_splits(self, catalog: Catalog, frac: float = DEFAULT_TRAIN_FRAC, seed: int = 42) -> List[SplitManifest]:
        """One manifest per team: train/val from that team, test from all others."""
        catalog = self._eligible(catalog)
        manifests = []
        for team in catalog.teams:
            rng = make_rng(seed, Protocol.TOTO.value, team)
            train, val = stratified_partition(self._team_strata(catalog, team), frac, rng)
            self._check_val(Protocol.TOTO, team, val)
            test = sorted(r.image_id for r in catalog if r.team != team)
            manifests.append(SplitManifest(Protocol.TOTO, team, train, val, test, seed, frac))
        self.manifests_generated += len(manifests)
        logger.info("generated %d TOTO manifests (seed %d)", len(manifests), seed)
        return manifests

    def loto_splits(self, catalog: Catalog, frac: float = DEFAULT_TRAIN_FRAC, seed: int = 42) -> List[SplitManifest]:
        """One manifest per held-out team: train/val stratified by (team, class) over the rest."""
        catalog = self._eligible(catalog)
        manifests = []
        for held_out in catalog.teams:
            strata: Dict[Tuple[str, str], List[str]] = {}
            for team in catalog.teams:
                if team == held_out:
                    continue
                for label, ids in self._team_strata(catalog, team).items():
                    strata[(team, label)] = ids
            rng = make_rng(seed, Protocol.LOTO.value, held_out)
            train, val = stratified_partition(strata, frac, rng)
            self._check_val(Protocol.LOTO, held_out, val)
            test = sorted(catalog.team_index[held_out])
            manifests.append(SplitManifest(Protocol.LOTO, held_out, train, val, test, seed, frac))
        self.manifests_generated += len(manifests)
        logger.info("generated %d LOTO manifests (seed %d)", len(manifests), seed)
        return manifests

    def _check_val(self, protocol: Protocol, team: TeamId, val: List[str]):
        if not val:
            self._warn(
                "empty_val",
                f"{protocol.value} {team}: every stratum is a singleton, validation partition is empty",
                team,
            )

    def _warn(self, code: str, message: str, subject: Optional[str]):
        logger.warning(message)
        warning = PipelineWarning(code=code, message=message, stage="split", subject=subject)
        self.event_bus.publish(Event(WARNING, data=warning, source="SplitGenerator"))

    def get_status(self):
        """Get current status of the split generator."""
        return {"manifests_generated": self.manifests_generated}


def toto_splits(catalog: Catalog, frac: float = DEFAULT_TRAIN_FRAC, seed: int = 42) -> List[SplitManifest]:
    return SplitGenerator().toto_splits(catalog, frac, seed)


def loto_splits(catalog: Catalog, frac: float = DEFAULT_TRAIN_FRAC, seed: int = 42) -> List[SplitManifest]:
    return SplitGenerator().loto_splits(catalog, frac, seed)


def validate_manifest(manifest: SplitManifest, catalog: Catalog) -> List[str]:
    """
    Check a manifest against a catalog; returns violations (empty = valid).

    Checks id existence, duplicates, pairwise disjointness, the team rule of
    each partition, and that every eligible record is assigned somewhere.
    """
    violations: List[str] = []
    parts = {"train": manifest.train_ids, "val": manifest.val_ids, "test": manifest.test_ids}
    focal = manifest.focal_team

    for name, ids in parts.items():
        seen = set()
        for image_id in ids:
            if image_id in seen:
                violations.append(f"{name}: {image_id} listed twice")
            seen.add(image_id)
            if image_id not in catalog:
                violations.append(f"{name}: {image_id} not in catalog")

    names = list(parts)
    for i, a in enumerate(names):
        for b in names[i + 1:]:
            for image_id in sorted(set(parts[a]) & set(parts[b])):
                violations.append(f"{image_id} appears in both {a} and {b}")

    focal_in_train = manifest.protocol is Protocol.TOTO
    for name, ids in parts.items():
        want_focal = focal_in_train if name != "test" else not focal_in_train
        for image_id in ids:
            if image_id not in catalog:
                continue
            is_focal = catalog.get(image_id).team == focal
            if is_focal != want_focal:
                side = "focal" if is_focal else "non-focal"
                violations.append(f"{name}: {image_id} belongs to a {side} team")

    assigned = set(manifest.train_ids) | set(manifest.val_ids) | set(manifest.test_ids)
    for record in catalog:
        if record.readable and record.image_id not in assigned:
            violations.append(f"{record.image_id} ({record.team}) is not assigned to any partition")
    return violations
