import io
import os
import struct

import numpy as np
import pytest

from core.exceptions import FrameDecodeError, TransportError
from harness.codec import (HEADER_SIZE, MAX_DIM, MSG_TYPES, ChannelFrame, decode_frame, encode_frame, frame_codec,
                           read_frame)
from harness.nodes import AdversaryEndpoint
from harness.transport import InProcTransport, TcpTransport, open_transport


class EchoEndpoint:
    """Answers every u frame with y = 2 u at the same k."""

    downlink = ('u',)
    uplink = ('y',)

    def handle(self, frames):
        return [ChannelFrame.of('y', frames[0].k, 2.0 * frames[0].payload)]


class FailingEndpoint:
    downlink = ('u',)
    uplink = ('y',)

    def handle(self, frames):
        raise RuntimeError("planta caída")


class PidEndpoint:
    """Answers with the id of the process that runs it."""

    downlink = ('u',)
    uplink = ('y',)

    def handle(self, frames):
        return [ChannelFrame.of('y', frames[0].k, [float(os.getpid())])]


class BrokenFactory:
    uplink = ('y',)

    def __init__(self):
        raise RuntimeError("sin planta")


class ShiftAdversary:
    """Adds one to every frame it sees and remembers their signals."""

    def __init__(self):
        self.seen = []

    def intercept(self, frame):
        self.seen.append(frame.signal)
        return ChannelFrame(frame.msg_type, frame.k, frame.payload + 1.0)


class TestFrameCodec:
    """
    Unit tests for the binary frame format.
    """

    def test_frame_layout(self):
        """
        Test that y = [1, 2] at k = 7 encodes to 31 bytes with the expected header.
        """
        data = encode_frame(ChannelFrame.of('y', 7, [1.0, 2.0]))
        assert len(data) == 31
        assert data[:HEADER_SIZE] == b'KGD1' + bytes([0x01]) + struct.pack('<Q', 7) + struct.pack('<H', 2)
        assert data[HEADER_SIZE:] == struct.pack('<2d', 1.0, 2.0)

    def test_empty_payload(self):
        """
        Test that a zero-dimensional frame is header only.
        """
        data = encode_frame(ChannelFrame.of('beta', 0, []))
        assert len(data) == 15
        assert decode_frame(data).dim == 0

    def test_decode_restores_frame(self):
        """
        Test that decoding gives back the same type, time index and payload bits.
        """
        frame = ChannelFrame.of('r_en', 2 ** 40, [np.pi, -0.0, 1e-300])
        decoded = frame_codec(frame_codec(frame))
        assert decoded == frame
        assert decoded.signal == 'r_en'

    def test_bad_magic(self):
        """
        Test that a frame with the wrong magic is rejected.
        """
        data = b'XXXX' + encode_frame(ChannelFrame.of('y', 1, [1.0]))[4:]
        with pytest.raises(FrameDecodeError, match="Magic inválido"):
            decode_frame(data)

    def test_unknown_type(self):
        """
        Test that an unknown message type is rejected.
        """
        data = bytearray(encode_frame(ChannelFrame.of('y', 1, [1.0])))
        data[4] = 0x09
        with pytest.raises(FrameDecodeError, match="Tipo de mensaje desconocido: 0x09"):
            decode_frame(bytes(data))

    def test_length_mismatch(self):
        """
        Test that a payload shorter than dim doubles is rejected.
        """
        data = encode_frame(ChannelFrame.of('y', 1, [1.0, 2.0]))[:-8]
        with pytest.raises(FrameDecodeError, match="no coincide con dim=2"):
            decode_frame(data)

    def test_truncated_header(self):
        """
        Test that fewer bytes than a header are rejected.
        """
        with pytest.raises(FrameDecodeError, match="Trama truncada"):
            decode_frame(b'KGD1')

    def test_unknown_signal(self):
        """
        Test that a signal without message type cannot be framed.
        """
        with pytest.raises(FrameDecodeError, match="Señal sin tipo de mensaje"):
            ChannelFrame.of('x', 0, [1.0])

    def test_codec_rejects_other_objects(self):
        """
        Test that frame_codec accepts only frames and bytes.
        """
        with pytest.raises(FrameDecodeError, match="No se puede codificar"):
            frame_codec([1.0])

    def test_read_frame_from_stream(self):
        """
        Test that consecutive frames are read back from a byte stream.
        """
        frames = [ChannelFrame.of('r_0p', 3, [0.5]), ChannelFrame.of('beta', 3, [1.0, -1.0])]
        stream = io.BytesIO(b''.join(encode_frame(f) for f in frames))
        assert [read_frame(stream.read) for _ in frames] == frames

    def test_negative_time_index(self):
        """
        Test that a negative k is rejected when the frame is built.
        """
        with pytest.raises(FrameDecodeError, match="fuera del rango sin signo"):
            ChannelFrame.of('y', -1, [1.0])

    def test_time_index_beyond_64_bits(self):
        """
        Test that k = 2**64 does not fit the header and is rejected.
        """
        with pytest.raises(FrameDecodeError, match="fuera del rango sin signo"):
            ChannelFrame.of('u', 2 ** 64, [1.0])

    def test_payload_wider_than_header_dim(self):
        """
        Test that more than 65535 values cannot be framed, while exactly 65535 can.
        """
        with pytest.raises(FrameDecodeError, match="excede el máximo de 65535"):
            ChannelFrame.of('y', 0, np.zeros(MAX_DIM + 1))
        assert len(encode_frame(ChannelFrame.of('y', 0, np.zeros(MAX_DIM)))) == HEADER_SIZE + 8 * MAX_DIM

    def test_random_frames_survive_the_wire(self):
        """
        Test that random frames (type, k, dim and raw payload bits, NaN patterns included) decode bit-exactly.
        """
        rng = np.random.default_rng(31)
        codes = sorted(MSG_TYPES)
        for _ in range(300):
            dim = int(rng.integers(0, 65))
            frame = ChannelFrame(msg_type=int(rng.choice(codes)),
                                 k=int(rng.integers(0, 2 ** 64, dtype=np.uint64)),
                                 payload=rng.integers(0, 2 ** 64, size=dim, dtype=np.uint64).view('<f8'))
            data = encode_frame(frame)
            assert len(data) == HEADER_SIZE + 8 * dim
            decoded = decode_frame(data)
            assert decoded == frame
            assert encode_frame(decoded) == data



class TestTransports:
    """
    Unit tests for the in-process and TCP transports.
    """

    def test_inproc_calls_endpoint(self):
        """
        Test that the in-process transport hands frames straight to the endpoint.
        """
        with InProcTransport(EchoEndpoint()) as link:
            reply = link.exchange([ChannelFrame.of('u', 0, [1.5])])
        assert reply == [ChannelFrame.of('y', 0, [3.0])]

    def test_plant_side_adversary_wraps_both_links(self):
        """
        Test that a plant-side adversary alters the downlink before the plant and the uplink after it.
        """
        adversary = ShiftAdversary()
        endpoint = AdversaryEndpoint(EchoEndpoint(), adversary)
        assert (endpoint.downlink, endpoint.uplink) == (('u',), ('y',))
        with InProcTransport(endpoint) as link:
            reply = link.exchange([ChannelFrame.of('u', 4, [1.0])])
        assert reply == [ChannelFrame.of('y', 4, [5.0])]
        assert adversary.seen == ['u', 'y']


    def test_inproc_builds_endpoint_from_factory(self):
        """
        Test that open_transport('inproc') calls the factory in the caller's process.
        """
        with open_transport('inproc', PidEndpoint) as link:
            reply = link.exchange([ChannelFrame.of('u', 0, [0.0])])
        assert reply[0].payload[0] == os.getpid()

    def test_tcp_lockstep_exchange(self):
        """
        Test several lockstep exchanges over a localhost socket.
        """
        with open_transport('tcp', EchoEndpoint, timeout=20.0) as link:
            for k in range(5):
                reply = link.exchange([ChannelFrame.of('u', k, [float(k)])])
                assert reply == [ChannelFrame.of('y', k, [2.0 * k])]

    def test_tcp_plant_runs_in_another_process(self):
        """
        Test that the TCP plant endpoint answers from a process other than the monitor's.
        """
        with open_transport('tcp', PidEndpoint, timeout=20.0) as link:
            reply = link.exchange([ChannelFrame.of('u', 0, [0.0])])
            plant_pid = link.plant_pid
        assert int(reply[0].payload[0]) != os.getpid()
        assert int(reply[0].payload[0]) == plant_pid

    def test_tcp_reports_endpoint_failure(self):
        """
        Test that an exception in the plant process surfaces as TransportError.
        """
        with TcpTransport(FailingEndpoint, timeout=20.0) as link:
            with pytest.raises(TransportError, match="planta caída"):
                link.exchange([ChannelFrame.of('u', 0, [1.0])])

    def test_tcp_reports_factory_failure(self):
        """
        Test that a factory failing inside the plant process is reported before any exchange.
        """
        with pytest.raises(TransportError, match="El nodo de planta falló: sin planta"):
            TcpTransport(BrokenFactory, timeout=20.0)

    def test_tcp_rejects_unpicklable_factory(self):
        """
        Test that a factory that cannot be shipped to the plant process is rejected.
        """
        with pytest.raises(TransportError, match="no es serializable"):
            TcpTransport(lambda: EchoEndpoint(), uplink=('y',))

    def test_unknown_transport(self):
        """
        Test that an unknown transport name is rejected.
        """
        with pytest.raises(TransportError, match="Transporte desconocido"):
            open_transport('udp', EchoEndpoint)
