"""Channel-group partition validation and config parsing."""

import json

import pytest

from adage.errors import (
    DuplicateGroupName,
    MissingChannels,
    OutOfRangeChannel,
    OverlappingGroups,
    SchemaError,
)
from adage.groups import (
    ChannelGroupSet,
    group_of_channel,
    parse_groups_config,
    serialize_groups,
    validate_partition,
)


def make(total, groups):
    return ChannelGroupSet(total, tuple(groups))


def test_members_are_sorted_and_order_preserved():
    g = make(4, [("b", (3, 1)), ("a", (0, 2))])
    assert g.names == ("b", "a")
    assert g.members(0) == (1, 3)
    assert g.index_of("a") == 1
    with pytest.raises(KeyError):
        g.index_of("nope")


def test_validate_partition_accepts_exact_cover():
    g = make(5, [("x", (0, 1)), ("y", (2,)), ("z", (3, 4))])
    validate_partition(g)
    assert g.k == 3


def test_validate_partition_defects():
    with pytest.raises(OverlappingGroups):
        validate_partition(make(3, [("x", (0, 1)), ("y", (1, 2))]))
    with pytest.raises(MissingChannels):
        validate_partition(make(4, [("x", (0, 1)), ("y", (2,))]))
    with pytest.raises(OutOfRangeChannel):
        validate_partition(make(2, [("x", (0, 1)), ("y", (2,))]))
    with pytest.raises(OutOfRangeChannel):
        validate_partition(make(2, [("x", (-1, 0)), ("y", (1,))]))
    with pytest.raises(DuplicateGroupName):
        validate_partition(make(2, [("x", (0,)), ("x", (1,))]))
    with pytest.raises(DuplicateGroupName):
        validate_partition(make(1, [("", (0,))]))


def test_group_of_channel():
    g = make(4, [("sar", (0, 1)), ("opt", (2, 3))])
    assert [group_of_channel(g, c) for c in range(4)] == [0, 0, 1, 1]
    with pytest.raises(OutOfRangeChannel):
        group_of_channel(g, 4)


def test_parse_groups_config_index_form():
    g = parse_groups_config(
        json.dumps(
            {
                "total_channels": 3,
                "groups": [
                    {"name": "a", "members": [0, 2]},
                    {"name": "b", "members": [1]},
                ],
            }
        )
    )
    assert g.k == 2
    assert g.members(0) == (0, 2)


def test_parse_groups_config_band_names():
    g = parse_groups_config(
        json.dumps(
            {
                "total_channels": 3,
                "band_names": ["VV", "VH", "NIR"],
                "groups": [
                    {"name": "sar", "members": ["VV", "VH"]},
                    {"name": "nir", "members": [2]},
                ],
            }
        )
    )
    assert g.members(0) == (0, 1)
    assert g.members(1) == (2,)


@pytest.mark.parametrize(
    "doc,path",
    [
        ("[]", "$"),
        ("{", "$"),
        ('{"groups": []}', "$.total_channels"),
        ('{"total_channels": 2}', "$.groups"),
        ('{"total_channels": 2, "groups": []}', "$.groups"),
        (
            '{"total_channels": 2, "band_names": ["a"], "groups": [{"name": "g", "members": [0, 1]}]}',
            "$.band_names",
        ),
        (
            '{"total_channels": 2, "band_names": ["a", "a"], "groups": [{"name": "g", "members": [0, 1]}]}',
            "$.band_names",
        ),
        (
            '{"total_channels": 1, "groups": [{"name": "", "members": [0]}]}',
            "$.groups[0].name",
        ),
        (
            '{"total_channels": 1, "groups": [{"name": "g", "members": [true]}]}',
            "$.groups[0].members[0]",
        ),
        (
            '{"total_channels": 1, "groups": [{"name": "g", "members": ["X"]}]}',
            "$.groups[0].members[0]",
        ),
    ],
)
def test_parse_groups_config_schema_errors(doc, path):
    with pytest.raises(SchemaError) as exc_info:
        parse_groups_config(doc)
    assert exc_info.value.path == path


def test_parse_rejects_non_partition():
    doc = json.dumps(
        {
            "total_channels": 2,
            "groups": [
                {"name": "a", "members": [0]},
                {"name": "b", "members": [0, 1]},
            ],
        }
    )
    with pytest.raises(OverlappingGroups):
        parse_groups_config(doc)


def test_serialize_roundtrip():
    g = make(4, [("sar", (0, 1)), ("opt", (2, 3))])
    validate_partition(g)
    back = parse_groups_config(serialize_groups(g))
    assert back == g
