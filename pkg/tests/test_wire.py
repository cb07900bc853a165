"""Wire protocol: framing, round trips, clock offset."""

import pytest

from msiengine.wire import (
    ALL_TYPES,
    WireError,
    WireMessage,
    clock_offset,
    decode_message,
    encode_message,
)


class TestFraming:
    def test_round_trip_identity_all_types(self):
        for i, type_ in enumerate(sorted(ALL_TYPES)):
            message = WireMessage(type=type_, seq=i + 1,
                                  payload={"k": i, "nested": {"a": [1, 2]}})
            assert decode_message(encode_message(message)) == message

    def test_truncated_frame_rejected_with_position(self):
        frame = encode_message(WireMessage("hello", 1, {"version": 1}))
        with pytest.raises(WireError) as err:
            decode_message(frame[: len(frame) // 2])
        assert "position" in str(err.value)

    def test_unknown_type_rejected_on_decode(self):
        with pytest.raises(WireError):
            decode_message('{"v":1,"type":"warp","seq":1,"payload":{}}')

    def test_unknown_type_rejected_on_encode(self):
        with pytest.raises(WireError):
            encode_message(WireMessage("warp", 1, {}))

    def test_version_mismatch_rejected(self):
        with pytest.raises(WireError):
            decode_message('{"v":2,"type":"hello","seq":1,"payload":{}}')

    def test_missing_fields_rejected(self):
        with pytest.raises(WireError):
            decode_message('{"v":1,"type":"hello","seq":1}')
        with pytest.raises(WireError):
            decode_message('{"type":"hello","seq":1,"payload":{}}')

    def test_non_object_frame_rejected(self):
        with pytest.raises(WireError):
            decode_message("[1,2,3]")

    def test_frames_are_newline_free(self):
        frame = encode_message(WireMessage("present", 9, {"trial": {"a": 1}}))
        assert "\n" not in frame

    def test_bytes_input_accepted(self):
        message = WireMessage("pong", 2, {"t0": 1, "t1": 2, "t2": 3})
        assert decode_message(encode_message(message).encode()) == message


class TestClockOffset:
    def test_symmetric_zero_skew(self):
        pings = [(0, 5, 6, 11), (10, 15, 16, 21), (20, 25, 26, 31)]
        assert clock_offset(pings) == 0.0

    def test_formula_arithmetic(self):
        assert clock_offset([(100, 200, 210, 130)] * 3) == 90.0

    def test_median_robust_to_one_corrupted_ping(self):
        clean = [(i * 100, i * 100 + 50, i * 100 + 52, i * 100 + 4)
                 for i in range(9)]
        true_offset = clock_offset(clean)
        corrupted = clean[:4] + [(0, 10_000_000, 10_000_002, 4)] + clean[4:]
        assert clock_offset(corrupted) == true_offset
        # the mean oracle, by contrast, is pulled far off
        mean_offset = sum(((t1 - t0) + (t2 - t3)) / 2
                          for t0, t1, t2, t3 in corrupted) / len(corrupted)
        assert abs(mean_offset - true_offset) > 1000

    def test_fewer_than_three_pings_rejected(self):
        with pytest.raises(WireError):
            clock_offset([(0, 1, 2, 3), (0, 1, 2, 3)])
