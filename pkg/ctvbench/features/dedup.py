"""
Perceptual-hash duplicate grouping and the deterministic retention rule.

Within a group the kept record is decided by, in order:
  1. larger file size
  2. larger pixel count
  3. capture device present
  4. team name (ascending)
  5. rel_path (ascending)
Unreadable records are dropped before grouping and never take part in a group.
"""

from typing import Dict, List, Mapping, Sequence, Tuple, Union

from ..core.errors import DuplicateGroupError, HashMissingError
from ..core.models import Catalog, DedupResult, DuplicateGroup, ImageRecord
from ..utils.logging import get_logger
from .phash import hamming

logger = get_logger(__name__)

Records = Union[Catalog, Mapping[str, ImageRecord]]


def priority_key(record: ImageRecord) -> Tuple:
    """Sort key implementing the retention rule; the smallest key wins."""
    return (
        -record.file_size_bytes,
        -record.pixels,
        record.device is None,
        record.team,
        record.rel_path,
    )


def _lookup(records: Records, image_id: str) -> ImageRecord:
    return records.get(image_id) if isinstance(records, Catalog) else records[image_id]


def select_representative(member_ids: Sequence[str], records: Records) -> str:
    """Return the image_id retained for a group of duplicates."""
    if not member_ids:
        raise ValueError("cannot select a representative from an empty group")
    return min(member_ids, key=lambda image_id: priority_key(_lookup(records, image_id)))


def deciding_level(winner: ImageRecord, loser: ImageRecord) -> int:
    """1-based index of the first rule that separates winner from loser."""
    for level, (a, b) in enumerate(zip(priority_key(winner), priority_key(loser)), start=1):
        if a != b:
            return level
    return len(priority_key(winner))


def _readable(catalog: Catalog) -> List[ImageRecord]:
    readable = [r for r in catalog if r.readable]
    missing = [r.image_id for r in readable if r.phash is None]
    if missing:
        raise HashMissingError(missing)
    return readable


def _exact_buckets(records: Sequence[ImageRecord]) -> Dict[int, List[str]]:
    buckets: Dict[int, List[str]] = {}
    for record in records:
        buckets.setdefault(record.phash, []).append(record.image_id)
    return buckets


def _near_buckets(records: Sequence[ImageRecord], max_distance: int) -> Dict[int, List[str]]:
    """Single-linkage clusters within a Hamming radius, keyed by the smallest member hash."""
    parent = list(range(len(records)))

    def find(i: int) -> int:
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i in range(len(records)):
        for j in range(i + 1, len(records)):
            if hamming(records[i].phash, records[j].phash) <= max_distance:
                parent[find(j)] = find(i)

    clusters: Dict[int, List[int]] = {}
    for i in range(len(records)):
        clusters.setdefault(find(i), []).append(i)
    return {
        min(records[i].phash for i in members): [records[i].image_id for i in members]
        for members in clusters.values()
    }


def group_duplicates(catalog: Catalog, max_distance: int = 0) -> List[DuplicateGroup]:
    """
    Group readable records by perceptual hash.

    Only hashes held by two or more records form a group; groups are sorted by
    hash and members keep catalog (rel_path) order. max_distance > 0 switches
    to near-duplicate clustering.
    """
    readable = _readable(catalog)
    buckets = _exact_buckets(readable) if max_distance == 0 else _near_buckets(readable, max_distance)
    groups = []
    for phash in sorted(buckets):
        members = buckets[phash]
        if len(members) < 2:
            continue
        groups.append(
            DuplicateGroup(
                hash=phash,
                member_ids=tuple(members),
                representative_id=select_representative(members, catalog),
            )
        )
    return groups


def check_groups(groups: Sequence[DuplicateGroup]):
    """Raise DuplicateGroupError unless groups are disjoint and hold their representative."""
    seen: Dict[str, int] = {}
    for group in groups:
        if group.representative_id not in group.member_ids:
            raise DuplicateGroupError(
                f"group {group.hash:016x}: representative {group.representative_id} is not a member"
            )
        for member in group.member_ids:
            if member in seen:
                raise DuplicateGroupError(f"{member} belongs to groups {seen[member]:016x} and {group.hash:016x}")
            seen[member] = group.hash


def apply_dedup(catalog: Catalog, max_distance: int = 0) -> DedupResult:
    """Drop unreadable records, then keep one representative per duplicate group."""
    unreadable = [r.image_id for r in catalog if not r.readable]
    groups = group_duplicates(catalog, max_distance=max_distance)
    check_groups(groups)

    removed: List[str] = []
    levels: Dict[str, int] = {}
    for group in groups:
        winner = catalog.get(group.representative_id)
        for member in group.member_ids:
            if member == group.representative_id:
                continue
            removed.append(member)
            levels[member] = deciding_level(winner, catalog.get(member))

    dropped = set(removed) | set(unreadable)
    retained = Catalog([r for r in catalog if r.image_id not in dropped])
    bytes_recovered = sum(catalog.get(i).file_size_bytes for i in removed)

    involved = sum(g.size for g in groups)
    logger.info(
        "dedup: %d records in %d groups, %d removed, %d unreadable dropped, %d bytes recovered",
        involved, len(groups), len(removed), len(unreadable), bytes_recovered,
    )
    return DedupResult(
        retained=retained,
        removed_ids=removed,
        groups=groups,
        bytes_recovered=bytes_recovered,
        removal_levels=levels,
        unreadable_ids=unreadable,
    )


def cross_team_collisions(catalog: Catalog) -> Dict[int, List[str]]:
    """Hashes held by readable records of more than one team, with those teams."""
    teams_by_hash: Dict[int, set] = {}
    for record in catalog:
        if record.readable and record.phash is not None:
            teams_by_hash.setdefault(record.phash, set()).add(record.team)
    return {h: sorted(t) for h, t in sorted(teams_by_hash.items()) if len(t) > 1}
