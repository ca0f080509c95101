import pytest
from hypothesis import given, settings, strategies as st

from stquad.flags import FlagKind, Writer, Reader
from stquad.messages import (
    Answer,
    Ask,
    DeleteAck,
    FlagRequest,
    InfoItem,
    InsertAck,
    IrQuery,
    Kind,
    LoadReport,
    MalformedMessageError,
    MergeReclaim,
    MergeReply,
    MessageEnvelope,
    PointRequest,
    QueryMode,
    QueryResult,
    RangeQuery,
    RangeRequest,
    RouteHeader,
    ScoredItem,
    SplitAssign,
    SplitReply,
    Transfer,
    TransferAck,
    decode_envelope,
    encode_envelope,
    pack_path,
    unpack_path,
)
from stquad.stgeom import ALL_TIME, BoundingBox, Point, SpatioTemporalRef, TimeInterval

from strategies import flags
from test_flags import sample_flags

ITEM = InfoItem(42, SpatioTemporalRef(Point(0.2, 0.3), TimeInterval(0.1, 0.2)), {"x", "y"})
RQ = RangeQuery(7, BoundingBox(-0.05, 0.2, 0.3, 0.4), ALL_TIME, frozenset({FlagKind.EXPERTISE}), 3)
Q = IrQuery({"x"}, None, 5, 2)

PAYLOADS = [
    (Kind.INSERT, FlagRequest(RouteHeader(1, 2, 3, 4), sample_flags()[0])),
    (Kind.JOIN, FlagRequest(RouteHeader(1, 2), sample_flags()[2])),
    (Kind.DELETE, FlagRequest(RouteHeader(1, 2, 1, 0), sample_flags()[1])),
    (Kind.INSERT_ACK, InsertAck(5, (0, 3, 1))),
    (Kind.DELETE_ACK, DeleteAck(5, True)),
    (Kind.RANGE_QUERY, RangeRequest(RouteHeader(1, 9), RQ, QueryMode.UP)),
    (Kind.POINT_QUERY, PointRequest(RouteHeader(1, 9), 4, Point(0.5, 0.5), frozenset(FlagKind), 1)),
    (Kind.QUERY_RESULT, QueryResult(7, (2,), 3, tuple(sample_flags()))),
    (Kind.SPLIT_ASSIGN, SplitAssign(11, (1, 2), 4, (1, 4))),
    (Kind.SPLIT_ACK, SplitReply(11, 2)),
    (Kind.SPLIT_NACK, SplitReply(11, 3)),
    (Kind.TRANSFER, Transfer(11, 2, tuple(sample_flags()))),
    (Kind.TRANSFER_ACK, TransferAck(11, 2, 9, False)),
    (Kind.MERGE_RECLAIM, MergeReclaim(12, 1)),
    (Kind.MERGE_ACK, MergeReply(12, 1, tuple(sample_flags()))),
    (Kind.MERGE_NACK, MergeReply(12, 1)),
    (Kind.LOAD_REPORT, LoadReport(2, 5, True)),
    (Kind.ASK, Ask(13, 2, IrQuery({"x"}, SpatioTemporalRef(BoundingBox(0, 0, 1, 1), ALL_TIME), 3, 1), 1)),
    (Kind.ASK, Ask(13, 2, Q, 0)),
    (Kind.ANSWER, Answer(13, (ScoredItem(ITEM, 4, 0.25),), 1)),
    (Kind.ANSWER, Answer(13, (), 0, True)),
]


@pytest.mark.parametrize("kind,payload", PAYLOADS, ids=[k.name for k, _ in PAYLOADS])
def test_envelope_round_trip(kind, payload):
    env = MessageEnvelope(1, 2, kind, (0, 1, 2, 3, 0), payload, seq=77)
    data = encode_envelope(env)
    back = decode_envelope(data)
    assert back == env
    assert encode_envelope(back) == data


@given(st.lists(st.integers(0, 3), max_size=16).map(tuple))
def test_path_packing(path):
    w = Writer()
    pack_path(w, path)
    assert len(w.getvalue()) == 1 + (2 * len(path) + 7) // 8
    assert unpack_path(Reader(w.getvalue())) == path


def test_nonzero_path_padding_rejected():
    with pytest.raises(Exception):
        unpack_path(Reader(bytes([1, 0b11111111])))


def test_garbage_is_malformed():
    data = encode_envelope(MessageEnvelope(1, 2, Kind.SPLIT_ACK, (), SplitReply(1, 2)))
    with pytest.raises(MalformedMessageError):
        decode_envelope(data[:-1])
    with pytest.raises(MalformedMessageError):
        decode_envelope(b"")


def test_bad_quadrant_is_malformed():
    env = MessageEnvelope(1, 2, Kind.SPLIT_ACK, (), SplitReply(1, 9))
    with pytest.raises(MalformedMessageError):
        decode_envelope(encode_envelope(env))


@settings(max_examples=200)
@given(st.lists(flags, max_size=4))
def test_transfer_round_trip_property(fs):
    env = MessageEnvelope(3, 4, Kind.TRANSFER, (1,), Transfer(1, 1, tuple(fs)))
    assert decode_envelope(encode_envelope(env)) == env
