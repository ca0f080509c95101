import struct

import pytest
from hypothesis import given, settings

from stquad.flags import (
    AgentLocationFlag,
    ExpertiseFlag,
    ExpertLinkFlag,
    FlagKind,
    MalformedFlagError,
    decode_flag,
    encode_flag,
    flag_routing_geometry,
    make_flag_id,
)
from stquad.stgeom import ALL_TIME, BoundingBox, Point, Polygon, SpatioTemporalRef, TimeInterval, covers, sector_of_path

from strategies import flags

REF = SpatioTemporalRef(BoundingBox(0.1, 0.1, 0.2, 0.2), TimeInterval(0.25, 0.5))


def sample_flags():
    return [
        ExpertiseFlag(make_flag_id(3, 0), 3, REF, {"b", "a", "ünï"}, 4),
        ExpertLinkFlag(make_flag_id(3, 1), 3, 9,
                       SpatioTemporalRef(Polygon((Point(0.1, 0.1), Point(0.3, 0.1), Point(0.2, 0.4))), ALL_TIME),
                       0.75),
        AgentLocationFlag(make_flag_id(3, 2), 3, Point(0.3, 0.3), 3),
    ]


def test_routing_geometry_examples():
    exp, link, loc = sample_flags()
    assert flag_routing_geometry(loc) == Point(0.3, 0.3)
    assert flag_routing_geometry(exp).mbb == BoundingBox(0.1, 0.1, 0.2, 0.2)
    assert flag_routing_geometry(link).mbb == BoundingBox(0.1, 0.1, 0.3, 0.4)
    assert covers(sector_of_path((0,)), flag_routing_geometry(link))
    assert not covers(sector_of_path((0, 0)), flag_routing_geometry(link))


@pytest.mark.parametrize("f", sample_flags(), ids=lambda f: f.kind.name)
def test_round_trip_each_kind(f):
    data = encode_flag(f)
    g = decode_flag(data)
    assert g == f and g.kind is f.kind
    assert encode_flag(g) == data


def test_flag_ids_pack_owner_and_counter():
    assert make_flag_id(5, 7) == (5 << 32) | 7
    with pytest.raises(ValueError):
        make_flag_id(1, 1 << 32)


def test_validation():
    with pytest.raises(ValueError):
        ExpertLinkFlag(1, 2, 2, REF)
    with pytest.raises(ValueError):
        ExpertLinkFlag(1, 2, 3, REF, weight=0.0)
    with pytest.raises(ValueError):
        ExpertiseFlag(1, 2, REF, {"a"}, 0)
    with pytest.raises(ValueError):
        AgentLocationFlag(-1, 2, Point(0, 0), 2)


def test_empty_input_is_malformed():
    with pytest.raises(MalformedFlagError):
        decode_flag(b"")


def test_truncated_and_trailing_bytes_rejected():
    data = encode_flag(sample_flags()[0])
    for cut in (1, 9, len(data) - 1):
        with pytest.raises(MalformedFlagError):
            decode_flag(data[:cut])
    with pytest.raises(MalformedFlagError):
        decode_flag(data + b"\x00")


def test_unknown_kind_rejected():
    data = bytearray(encode_flag(sample_flags()[2]))
    data[0] = 7
    with pytest.raises(MalformedFlagError):
        decode_flag(bytes(data))


def test_unsorted_terms_are_not_canonical():
    f = ExpertiseFlag(1, 1, REF, {"a", "b"}, 1)
    data = encode_flag(f)
    i, j = data.index(b"a"), data.index(b"b")
    swapped = bytearray(data)
    swapped[i], swapped[j] = data[j], data[i]
    with pytest.raises(MalformedFlagError):
        decode_flag(bytes(swapped))


def test_negative_zero_encodes_like_zero():
    a = AgentLocationFlag(1, 1, Point(0.0, 0.5), 1)
    b = AgentLocationFlag(1, 1, Point(-0.0, 0.5), 1)
    assert encode_flag(a) == encode_flag(b)


def test_layout_is_little_endian():
    data = encode_flag(AgentLocationFlag(0x0102, 7, Point(0.5, 0.25), 9))
    assert data[0] == FlagKind.AGENT_LOCATION
    assert struct.unpack_from("<QQdd", data, 1) == (0x0102, 7, 0.5, 0.25)


@settings(max_examples=500)
@given(flags)
def test_codec_round_trip_property(f):
    data = encode_flag(f)
    g = decode_flag(data)
    assert g == f
    assert encode_flag(g) == data
