import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from flowedit.replay import ChunkTransition
from flowedit.rng import substream
from flowedit.service import protocol
from flowedit.service.protocol import (
    ERR_TRUNCATED,
    ERR_TYPE,
    ERR_VERSION,
    ChunkReply,
    ErrorFrame,
    GetChunk,
    Heartbeat,
    InterventionNotice,
    ProtocolError,
    PushTransition,
    StatsPush,
    UiFrame,
    UiIntervene,
    decode,
    encode,
    from_json_obj,
)


def random_message(rng) -> object:
    kind = int(rng.integers(0, 9))
    vec = lambda n: rng.standard_normal(n)
    if kind == 0:
        return GetChunk(obs=vec(int(rng.integers(1, 20))))
    if kind == 1:
        return ChunkReply(chunk=vec(int(rng.integers(1, 32))), policy_version=int(rng.integers(0, 1 << 31)))
    if kind == 2:
        c = int(rng.integers(1, 9))
        n = int(rng.integers(1, c + 1))
        return PushTransition(
            transition=ChunkTransition(
                obs=vec(6),
                chunk=vec(c * 2),
                rewards=rng.integers(0, 2, n).astype(float),
                next_obs=vec(6),
                done=bool(rng.integers(2)),
                mask=rng.integers(0, 2, c).astype(bool),
                source=("autonomous", "intervention", "demo")[int(rng.integers(3))],
                truncated=bool(rng.integers(2)),
            )
        )
    if kind == 3:
        return InterventionNotice(
            overrides=[(int(rng.integers(0, 8)), vec(2)) for _ in range(int(rng.integers(0, 5)))]
        )
    if kind == 4:
        return StatsPush(
            step=int(rng.integers(0, 1 << 40)),
            critic_loss=float(rng.standard_normal()),
            edit_loss=float(rng.standard_normal()),
            cfm_loss=float(rng.standard_normal()),
            alpha=float(np.abs(rng.standard_normal())),
            q_mean=float(rng.standard_normal()),
        )
    if kind == 5:
        return UiFrame(
            episode=int(rng.integers(0, 1 << 40)),
            step=int(rng.integers(0, 1 << 31)),
            chunk_step=int(rng.integers(0, 8)),
            chunk_size=8,
            reward=bool(rng.integers(2)),
            policy_version=int(rng.integers(0, 1 << 31)),
            gripper=vec(2),
            objects=[(f"obj{i}", vec(2)) for i in range(int(rng.integers(0, 4)))],
            intervening=bool(rng.integers(2)),
        )
    if kind == 6:
        return UiIntervene(engaged=bool(rng.integers(2)), command=vec(3), client_ts=float(rng.standard_normal()))
    if kind == 7:
        return Heartbeat()
    return ErrorFrame(code=int(rng.integers(1, 5)), detail="x" * int(rng.integers(0, 10)))


def assert_messages_equal(a, b):
    assert type(a) is type(b)
    for key, va in a.__dict__.items():
        vb = b.__dict__[key]
        if isinstance(va, np.ndarray):
            assert va.tobytes() == vb.tobytes(), key
        elif isinstance(va, list) and va and isinstance(va[0], tuple):
            assert len(va) == len(vb)
            for (x1, y1), (x2, y2) in zip(va, vb):
                assert x1 == x2
                assert np.asarray(y1).tobytes() == np.asarray(y2).tobytes()
        elif isinstance(va, ChunkTransition):
            assert va.obs.tobytes() == vb.obs.tobytes()
            assert va.chunk.tobytes() == vb.chunk.tobytes()
            assert va.rewards.tobytes() == vb.rewards.tobytes()
            assert va.next_obs.tobytes() == vb.next_obs.tobytes()
            assert va.done == vb.done
            assert np.array_equal(va.mask, vb.mask)
            assert va.source == vb.source
            assert va.truncated == vb.truncated
        else:
            assert va == vb, key


class TestFraming:
    def test_heartbeat_is_six_bytes(self):
        frame = encode(Heartbeat())
        assert len(frame) == 6
        assert frame[:4] == (2).to_bytes(4, "little")  # length counts version+type
        assert frame[4] == protocol.VERSION
        assert frame[5] == Heartbeat.TYPE

    def test_bad_version_rejected(self):
        frame = bytearray(encode(Heartbeat()))
        frame[4] = 255
        with pytest.raises(ProtocolError) as e:
            decode(bytes(frame))
        assert e.value.code == ERR_VERSION

    def test_bad_type_rejected(self):
        frame = bytearray(encode(Heartbeat()))
        frame[5] = 200
        with pytest.raises(ProtocolError) as e:
            decode(bytes(frame))
        assert e.value.code == ERR_TYPE

    def test_truncated_frame_rejected(self):
        frame = encode(GetChunk(obs=np.zeros(4)))
        with pytest.raises(ProtocolError) as e:
            decode(frame[:-1])
        assert e.value.code == ERR_TRUNCATED

    def test_stream_decoding_consumes_exactly_one_frame(self):
        a = encode(Heartbeat())
        b = encode(GetChunk(obs=np.ones(2)))
        msg, used = decode(a + b)
        assert isinstance(msg, Heartbeat)
        assert used == len(a)
        msg2, used2 = decode((a + b)[used:])
        assert isinstance(msg2, GetChunk)
        assert used2 == len(b)


class TestRoundTrip:
    def test_hundred_thousand_random_messages(self):
        rng = substream(0, "proto-fuzz")
        for i in range(100_000):
            msg = random_message(rng)
            decoded, used = decode(encode(msg))
            if i % 997 == 0:  # full structural check on a sample
                assert_messages_equal(msg, decoded)
            assert used == len(encode(msg))
        # spot-check the last one thoroughly too
        assert_messages_equal(msg, decoded)

    def test_every_type_roundtrips_structurally(self):
        rng = substream(1, "proto-each")
        seen = set()
        while len(seen) < 9:
            msg = random_message(rng)
            seen.add(type(msg).__name__)
            decoded, _ = decode(encode(msg))
            assert_messages_equal(msg, decoded)


class TestDecoderRobustness:
    def test_hundred_thousand_random_byte_strings_never_crash(self):
        rng = substream(2, "proto-bytes")
        outcomes = {"ok": 0, "error": 0}
        for _ in range(100_000):
            n = int(rng.integers(0, 64))
            blob = rng.integers(0, 256, n, dtype=np.uint8).tobytes()
            try:
                decode(blob)
                outcomes["ok"] += 1
            except ProtocolError:
                outcomes["error"] += 1
        # everything decodes or errors; nothing else escaped
        assert outcomes["ok"] + outcomes["error"] == 100_000

    @given(st.binary(max_size=256))
    @settings(max_examples=300)
    def test_arbitrary_bytes_property(self, blob):
        try:
            decode(blob)
        except ProtocolError:
            pass

    def test_mutated_valid_frames_never_crash(self):
        rng = substream(3, "proto-mutate")
        for i in range(2000):
            msg = random_message(rng)
            frame = bytearray(encode(msg))
            for _ in range(int(rng.integers(1, 4))):
                pos = int(rng.integers(0, len(frame)))
                frame[pos] = int(rng.integers(0, 256))
            try:
                decode(bytes(frame))
            except ProtocolError:
                pass


class TestJson:
    def test_ui_intervene_json_roundtrip(self):
        msg = UiIntervene(engaged=True, command=np.array([0.5, -0.25]), client_ts=123.5)
        back = from_json_obj(msg.to_json_obj())
        assert back.engaged == msg.engaged
        assert back.command.tolist() == msg.command.tolist()
        assert back.client_ts == msg.client_ts

    def test_json_schema_matches_binary_fields(self):
        frame = UiFrame(
            episode=1,
            step=2,
            chunk_step=3,
            chunk_size=8,
            reward=False,
            policy_version=4,
            gripper=np.array([0.1, 0.2]),
            objects=[("cube", np.array([0.3, 0.4]))],
        )
        obj = frame.to_json_obj()
        assert set(obj) == {
            "type",
            "episode",
            "step",
            "chunk_step",
            "chunk_size",
            "reward",
            "policy_version",
            "gripper",
            "objects",
            "intervening",
        }
