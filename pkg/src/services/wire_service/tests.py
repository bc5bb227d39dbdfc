import os
import struct
import tempfile

import numpy as np
import torch
from django.test import SimpleTestCase

from src.services.model_zoo_service.models import build_model
from src.services.model_zoo_service.specs import get_preset
from src.services.model_zoo_service.split import flatten_features, split_at
from src.shared.exceptions import (
    BadMagic, ChecksumMismatch, InconsistentDim, InvalidConfig, ProtocolError, ShapeMismatch,
    SplitLeakError, Truncated, UnknownType, UnsupportedVersion,
)
from .capture import read_capture, write_capture
from .codec import (
    HEADER_SIZE, Frame, FrameStream, MessageType, decode_floats, decode_frame, encode_floats,
    encode_frame, encode_shape,
)
from .deployment import SimulatedDeployment
from .links import InProcessLink, SocketLink, TappedLink
from .serializers import SessionConfig
from .servers import FrameServer, ServiceThread, TapRelay
from .services import CloudService, EdgeService, Sniffer, SplitClient


def _split(seed=0, split_index=6):
    return split_at(build_model(get_preset('tinyvgg', input_size=16), seed), split_index)


def _images(count, seed=0):
    return torch.rand(count, 3, 16, 16, generator=torch.Generator().manual_seed(seed))


def _in_process_probs(split, image):
    with torch.no_grad():
        return torch.softmax(split.model(image[None]), dim=1)[0].numpy().astype(np.float32)


class Recorder:
    """Pass-through handler that remembers every request it saw"""

    def __init__(self, handler):
        self.handler = handler
        self.seen = []

    def handle(self, data):
        self.seen.append(bytes(data))
        return self.handler.handle(data)


class CodecTests(SimpleTestCase):
    def test_feature_frame_layout(self):
        data = encode_frame(Frame(MessageType.FEATURE, 7, encode_floats([1.0])))
        self.assertEqual(len(data), HEADER_SIZE + 4)
        self.assertEqual(data[:4], b'SLKF')
        self.assertEqual(data[4], 1)
        self.assertEqual(data[5], 2)
        self.assertEqual(struct.unpack_from('<II', data, 6), (7, 4))
        self.assertEqual(decode_frame(data).payload, struct.pack('<f', 1.0))

    def test_round_trip_many_frames(self):
        rng = np.random.default_rng(0)
        for _ in range(1000):
            frame = Frame(
                MessageType(int(rng.integers(1, 8))),
                int(rng.integers(0, 2 ** 32)),
                rng.bytes(int(rng.integers(0, 300))),
            )
            self.assertEqual(decode_frame(encode_frame(frame)), frame)

    def test_header_errors(self):
        good = encode_frame(Frame(MessageType.INPUT, 1, b'abcd'))
        with self.assertRaises(BadMagic):
            decode_frame(b'XXXX' + good[4:])
        with self.assertRaises(UnsupportedVersion):
            decode_frame(good[:4] + bytes([2]) + good[5:])
        with self.assertRaises(UnknownType):
            decode_frame(good[:5] + bytes([9]) + good[6:])
        with self.assertRaises(Truncated):
            decode_frame(good[:-1])
        with self.assertRaises(Truncated):
            decode_frame(good[:10])

    def test_fuzz_never_crashes(self):
        rng = np.random.default_rng(1)
        prefix = b'SLKF\x01'
        for case in range(1000):
            data = rng.bytes(int(rng.integers(0, 64)))
            if case % 2:
                data = prefix + data
            try:
                frame = decode_frame(data)
            except SplitLeakError:
                continue
            self.assertIsInstance(frame, Frame)
            self.assertEqual(encode_frame(frame), data)

    def test_stream_reassembly_across_chunks(self):
        frames = [Frame(MessageType.FEATURE, i, encode_floats(np.arange(i, dtype=np.float32))) for i in range(20)]
        data = b''.join(encode_frame(f) for f in frames)
        stream = FrameStream()
        received = []
        for start in range(0, len(data), 7):
            received.extend(stream.feed(data[start:start + 7]))
        self.assertEqual(received, frames)

    def test_stream_resyncs_after_garbage(self):
        frame = Frame(MessageType.ACK, 3, b'\x00')
        stream = FrameStream()
        received = stream.feed(b'garbageSLKF\x09' + bytes(20) + encode_frame(frame))
        self.assertEqual(received, [frame])


class CaptureFileTests(SimpleTestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.path = os.path.join(self.tmp.name, 'capture.slkx')

    def tearDown(self):
        self.tmp.cleanup()

    def test_round_trip(self):
        rows = np.random.default_rng(0).normal(size=(5, 12)).astype(np.float32)
        write_capture(self.path, rows)
        self.assertTrue(np.array_equal(read_capture(self.path), rows))
        self.assertEqual(os.path.getsize(self.path), 14 + 4 * 5 * 12 + 4)

    def test_corruption(self):
        write_capture(self.path, np.ones((2, 3), dtype=np.float32))
        with open(self.path, 'rb') as f:
            data = bytearray(f.read())
        data[16] ^= 0x01
        with open(self.path, 'wb') as f:
            f.write(bytes(data))
        with self.assertRaises(ChecksumMismatch):
            read_capture(self.path)
        with open(self.path, 'wb') as f:
            f.write(bytes(data[:-6]))
        with self.assertRaises(Truncated):
            read_capture(self.path)


class ServiceTests(SimpleTestCase):
    def setUp(self):
        self.split = _split()

    def test_edge_feature_payload_matches_in_process(self):
        deployment = SimulatedDeployment(self.split, 'score', tap=True)
        client = deployment.open_session()
        zeros = torch.zeros(3, 16, 16)
        client.infer(zeros)
        with torch.no_grad():
            expected = flatten_features(self.split.edge(zeros[None])).numpy().astype('<f4').tobytes()
        self.assertEqual(deployment.sniffer.capture()[0].astype('<f4').tobytes(), expected)

    def test_feature_frames_carry_no_shape(self):
        sniffer_stream = Recorder(CloudService(self.split, SessionConfig.for_split(self.split, 'score')))
        edge = EdgeService(self.split, InProcessLink(sniffer_stream))
        client = SplitClient(InProcessLink(edge), (3, 16, 16))
        client.infer(_images(1)[0])
        feature = decode_frame(sniffer_stream.seen[-1])
        self.assertEqual(feature.msg_type, MessageType.FEATURE)
        self.assertEqual(feature.payload_len, 4 * self.split.feature_size)

    def test_wrong_input_length_gets_error_frame(self):
        deployment = SimulatedDeployment(self.split, 'score')
        cloud = CloudService(self.split, deployment.config)
        edge = EdgeService(self.split, InProcessLink(cloud))
        edge.handle(encode_frame(Frame(MessageType.SESSION_HELLO, 4, encode_shape((3, 16, 16)))))
        reply = decode_frame(edge.handle(encode_frame(Frame(MessageType.INPUT, 4, b'\x00' * 12))))
        self.assertEqual(reply.msg_type, MessageType.ERROR)
        payload = encode_floats(np.zeros(3 * 16 * 16, dtype=np.float32))
        reply = decode_frame(edge.handle(encode_frame(Frame(MessageType.INPUT, 4, payload))))
        self.assertEqual(reply.msg_type, MessageType.OUTPUT_SCORE)

    def test_stream_of_inputs(self):
        deployment = SimulatedDeployment(self.split, 'none', tap=True)
        client = deployment.open_session()
        for image in _images(100):
            client.infer(image)
        capture = deployment.sniffer.capture()
        self.assertEqual(capture.shape, (100, self.split.feature_size))
        self.assertEqual(client.query_count, 100)

    def test_score_mode_probabilities(self):
        client = SimulatedDeployment(self.split, 'score').open_session()
        observation = client.infer(_images(1)[0])
        self.assertAlmostEqual(float(observation.probs.sum()), 1.0, delta=1e-5)

    def test_hard_mode_matches_score_argmax(self):
        score = SimulatedDeployment(self.split, 'score').open_session()
        hard = SimulatedDeployment(self.split, 'hard').open_session()
        for image in _images(10, seed=3):
            self.assertEqual(hard.infer(image).label, int(np.argmax(score.infer(image).probs)))

    def test_none_mode_reveals_nothing(self):
        client = SimulatedDeployment(self.split, 'none').open_session()
        observation = client.infer(_images(1)[0])
        self.assertEqual(observation.mode, 'none')
        self.assertIsNone(observation.probs)
        self.assertIsNone(observation.label)

    def test_end_to_end_equals_in_process(self):
        client = SimulatedDeployment(self.split, 'score').open_session()
        for image in _images(8, seed=5):
            self.assertTrue(np.array_equal(client.infer(image).probs, _in_process_probs(self.split, image)))

    def test_query_counter(self):
        client = SimulatedDeployment(self.split, 'hard').open_session()
        for k in range(1, 6):
            client.infer(_images(1, seed=k)[0])
            self.assertEqual(client.query_count, k)

    def test_remote_error_raises_protocol_error(self):
        other = split_at(build_model(get_preset('tinyvgg', input_size=16), 0), 3)
        config = SessionConfig.for_split(other, 'score')
        edge = EdgeService(self.split, InProcessLink(CloudService(other, config)))
        client = SplitClient(InProcessLink(edge), (3, 16, 16))
        with self.assertRaises(ProtocolError) as ctx:
            client.infer(_images(1)[0])
        self.assertEqual(ctx.exception.details['remote_error_code'], 'PAYLOAD_LENGTH_MISMATCH')

    def test_client_rejects_wrong_shape(self):
        client = SimulatedDeployment(self.split, 'score').open_session()
        with self.assertRaises(ShapeMismatch):
            client.infer(torch.zeros(1, 16, 16))
        self.assertEqual(client.query_count, 0)

    def test_session_config_validation(self):
        with self.assertRaises(InvalidConfig):
            SessionConfig.create(output_mode='logits', input_shape=[3, 16, 16], feature_shape=[32, 4, 4])
        with self.assertRaises(InvalidConfig):
            SessionConfig.create(output_mode='score', input_shape=[3, 16], feature_shape=[32, 4, 4])


class SnifferTests(SimpleTestCase):
    def test_capture_count_and_width(self):
        split = _split(split_index=3)
        deployment = SimulatedDeployment(split, 'none', tap=True)
        client = deployment.open_session()
        for image in _images(512, seed=2):
            client.infer(image)
        capture = deployment.sniffer.capture()
        self.assertEqual(capture.shape, (512, 16 * 8 * 8))

    def test_only_inputs_and_outputs(self):
        sniffer = Sniffer()
        sniffer.observe(encode_frame(Frame(MessageType.INPUT, 1, encode_floats([0.0] * 8))))
        sniffer.observe(encode_frame(Frame(MessageType.OUTPUT_SCORE, 1, encode_floats([0.5, 0.5]))))
        self.assertEqual(sniffer.count, 0)
        self.assertEqual(sniffer.capture().shape[0], 0)

    def test_inconsistent_dim(self):
        sniffer = Sniffer()
        sniffer.observe(encode_frame(Frame(MessageType.FEATURE, 1, encode_floats([1.0, 2.0]))))
        with self.assertRaises(InconsistentDim):
            sniffer.observe(encode_frame(Frame(MessageType.FEATURE, 1, encode_floats([1.0, 2.0, 3.0]))))
        self.assertEqual(sniffer.count, 1)

    def test_tap_swallows_sniffer_errors(self):
        split = _split()
        sniffer = Sniffer()
        sniffer.dim = 1
        cloud = Recorder(CloudService(split, SessionConfig.for_split(split, 'score')))
        link = TappedLink(InProcessLink(cloud), sniffer)
        reply = link.handle(encode_frame(Frame(MessageType.FEATURE, 1, encode_floats([1.0, 2.0]))))
        # cloud has no session yet, so it answers with an error; the sniffer failure stays silent
        self.assertEqual(decode_frame(reply).msg_type, MessageType.ERROR)
        self.assertEqual(len(cloud.seen), 1)
        self.assertEqual(sniffer.count, 0)

    def test_passivity(self):
        split = _split()
        config = SessionConfig.for_split(split, 'score')
        outputs, streams = [], []
        for tapped in (False, True):
            cloud = Recorder(CloudService(split, config))
            link = InProcessLink(cloud)
            if tapped:
                link = TappedLink(link, Sniffer())
            client = SplitClient(InProcessLink(EdgeService(split, link)), (3, 16, 16))
            outputs.append([client.infer(image).probs for image in _images(10, seed=8)])
            streams.append(cloud.seen)
        self.assertEqual(streams[0], streams[1])
        for plain, tapped in zip(*outputs):
            self.assertTrue(np.array_equal(plain, tapped))

    def test_limit(self):
        sniffer = Sniffer(limit=2)
        for _ in range(4):
            sniffer.observe(encode_frame(Frame(MessageType.FEATURE, 1, encode_floats([1.0]))))
        self.assertEqual(sniffer.count, 2)
        self.assertTrue(sniffer.full)

    def test_reset_drops_partial_frame(self):
        sniffer = Sniffer()
        first = encode_frame(Frame(MessageType.FEATURE, 1, encode_floats([1.0, 2.0])))
        sniffer.observe(first[:HEADER_SIZE + 3])
        sniffer.reset()
        sniffer.observe(encode_frame(Frame(MessageType.FEATURE, 1, encode_floats([5.0, 6.0, 7.0]))))
        self.assertEqual(sniffer.count, 1)
        self.assertEqual(sniffer.dim, 3)
        self.assertEqual(sniffer.frames_seen, 1)
        self.assertTrue(np.array_equal(sniffer.capture(), np.array([[5.0, 6.0, 7.0]], dtype=np.float32)))


class SocketTransportTests(SimpleTestCase):
    def test_networked_inference_with_tap(self):
        split = _split()
        config = SessionConfig.for_split(split, 'score')
        sniffer = Sniffer()
        cloud = ServiceThread(FrameServer(lambda: CloudService(split, config), '127.0.0.1:0', 'cloud')).start()
        tap = ServiceThread(TapRelay(sniffer, '127.0.0.1:0', cloud.service.endpoint)).start()
        edge = ServiceThread(FrameServer(
            lambda: EdgeService(split, SocketLink(tap.service.endpoint, timeout=10)), '127.0.0.1:0', 'edge',
        )).start()
        client = SplitClient(SocketLink(edge.service.endpoint, timeout=10), (3, 16, 16))
        try:
            self.assertEqual(client.connect(), 'score')
            for image in _images(5, seed=11):
                self.assertTrue(np.array_equal(client.infer(image).probs, _in_process_probs(split, image)))
        finally:
            client.close()
            edge.stop()
            tap.stop()
            cloud.stop()
        self.assertEqual(sniffer.count, 5)
        self.assertEqual(sniffer.dim, split.feature_size)
