"""Channel-group partitions: the explanatory unit everything else works on.

A ChannelGroupSet is an ordered partition of the channel indices 0..C-1 into
named groups. Group order is significant: it fixes the group axis of
attribution maps and the deterministic tie-break used when ranking.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

from .errors import (
    DuplicateGroupName,
    MissingChannels,
    OutOfRangeChannel,
    OverlappingGroups,
    SchemaError,
)


@dataclass(frozen=True)
class ChannelGroupSet:
    total_channels: int
    groups: tuple  # of (name, tuple of sorted channel indices)

    def __post_init__(self):
        norm = tuple(
            (str(name), tuple(sorted(int(m) for m in members)))
            for name, members in self.groups
        )
        object.__setattr__(self, "groups", norm)
        object.__setattr__(self, "total_channels", int(self.total_channels))

    @property
    def k(self) -> int:
        return len(self.groups)

    @property
    def names(self) -> tuple:
        return tuple(name for name, _ in self.groups)

    def members(self, group_index: int) -> tuple:
        return self.groups[group_index][1]

    def index_of(self, name: str) -> int:
        for i, (n, _) in enumerate(self.groups):
            if n == name:
                return i
        raise KeyError(name)


def validate_partition(g: ChannelGroupSet) -> None:
    """Check mutual exclusivity and completeness; raise on the first defect."""
    seen_names = set()
    for name, _ in g.groups:
        if not name:
            raise DuplicateGroupName(name)
        if name in seen_names:
            raise DuplicateGroupName(name)
        seen_names.add(name)

    owner = {}
    for name, members in g.groups:
        for c in members:
            if c < 0 or c >= g.total_channels:
                raise OutOfRangeChannel(c, g.total_channels)
            if c in owner:
                raise OverlappingGroups(c, owner[c], name)
            owner[c] = name

    missing = [c for c in range(g.total_channels) if c not in owner]
    if missing:
        raise MissingChannels(missing)


def group_of_channel(g: ChannelGroupSet, c: int) -> int:
    """Return the index of the unique group containing channel c."""
    if c < 0 or c >= g.total_channels:
        raise OutOfRangeChannel(c, g.total_channels)
    for i, (_, members) in enumerate(g.groups):
        if c in members:
            return i
    raise MissingChannels([c])


def parse_groups_config(text: str) -> ChannelGroupSet:
    """Parse and validate the JSON group configuration.

    Schema: {"total_channels": int, "band_names": [str]?,
             "groups": [{"name": str, "members": [int|str]}]}.
    String members are resolved through the band_names table.
    """
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError("$", f"invalid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise SchemaError("$", "expected an object")

    total = doc.get("total_channels")
    if not isinstance(total, int) or isinstance(total, bool) or total < 1:
        raise SchemaError("$.total_channels", "expected a positive integer")

    band_names = doc.get("band_names")
    band_index = {}
    if band_names is not None:
        if not isinstance(band_names, list) or not all(
            isinstance(b, str) for b in band_names
        ):
            raise SchemaError("$.band_names", "expected a list of strings")
        if len(band_names) != total:
            raise SchemaError(
                "$.band_names", f"expected {total} entries, got {len(band_names)}"
            )
        for i, b in enumerate(band_names):
            if b in band_index:
                raise SchemaError("$.band_names", f"duplicate band name {b!r}")
            band_index[b] = i

    raw_groups = doc.get("groups")
    if not isinstance(raw_groups, list) or not raw_groups:
        raise SchemaError("$.groups", "expected a nonempty list")

    groups = []
    for gi, entry in enumerate(raw_groups):
        where = f"$.groups[{gi}]"
        if not isinstance(entry, dict):
            raise SchemaError(where, "expected an object")
        name = entry.get("name")
        if not isinstance(name, str) or not name:
            raise SchemaError(f"{where}.name", "expected a nonempty string")
        raw_members = entry.get("members")
        if not isinstance(raw_members, list):
            raise SchemaError(f"{where}.members", "expected a list")
        members = []
        for mi, m in enumerate(raw_members):
            if isinstance(m, bool):
                raise SchemaError(f"{where}.members[{mi}]", "expected int or string")
            if isinstance(m, int):
                members.append(m)
            elif isinstance(m, str):
                if m not in band_index:
                    raise SchemaError(
                        f"{where}.members[{mi}]", f"unknown band name {m!r}"
                    )
                members.append(band_index[m])
            else:
                raise SchemaError(f"{where}.members[{mi}]", "expected int or string")
        groups.append((name, members))

    result = ChannelGroupSet(total, tuple(groups))
    validate_partition(result)
    return result


def serialize_groups(g: ChannelGroupSet) -> str:
    """Inverse of parse_groups_config (index form, no band-name table)."""
    doc = {
        "total_channels": g.total_channels,
        "groups": [
            {"name": name, "members": list(members)} for name, members in g.groups
        ],
    }
    return json.dumps(doc, indent=2)
