import struct
from dataclasses import dataclass
from typing import Callable, Union

import numpy as np

from core.exceptions import FrameDecodeError

MAGIC = b'KGD1'
HEADER = struct.Struct('<4sBQH')
HEADER_SIZE = HEADER.size
PAYLOAD_DTYPE = np.dtype('<f8')
MAX_K = 2 ** 64 - 1
MAX_DIM = 2 ** 16 - 1

MSG_TYPES = {
    0x01: 'y',
    0x02: 'u',
    0x03: 'r_en',
    0x04: 'r_0p',
    0x05: 'beta',
    0x06: 'gamma',
    0x07: 'v',
}
SIGNAL_TYPES = {signal: code for code, signal in MSG_TYPES.items()}


@dataclass(frozen=True, eq=False)
class ChannelFrame:
    """One signal sample in flight: type, time index and float64 payload."""

    msg_type: int
    k: int
    payload: np.ndarray

    def __post_init__(self):
        if self.msg_type not in MSG_TYPES:
            raise FrameDecodeError(f"Tipo de mensaje desconocido: 0x{self.msg_type:02x}")
        if not 0 <= int(self.k) <= MAX_K:
            raise FrameDecodeError(f"Índice k={self.k} fuera del rango sin signo de 64 bits")
        payload = np.ascontiguousarray(self.payload, dtype=PAYLOAD_DTYPE).reshape(-1)
        if payload.size > MAX_DIM:
            raise FrameDecodeError(f"dim={payload.size} excede el máximo de {MAX_DIM} valores por trama")
        object.__setattr__(self, 'k', int(self.k))
        object.__setattr__(self, 'payload', payload)

    @classmethod
    def of(cls, signal: str, k: int, payload) -> 'ChannelFrame':
        if signal not in SIGNAL_TYPES:
            raise FrameDecodeError(f"Señal sin tipo de mensaje: {signal}")
        return cls(SIGNAL_TYPES[signal], k, payload)

    @property
    def signal(self) -> str:
        return MSG_TYPES[self.msg_type]

    @property
    def dim(self) -> int:
        return self.payload.size

    def __eq__(self, other) -> bool:
        if not isinstance(other, ChannelFrame):
            return NotImplemented
        return (self.msg_type, self.k) == (other.msg_type, other.k) and \
            self.payload.tobytes() == other.payload.tobytes()

    __hash__ = None


def encode_frame(frame: ChannelFrame) -> bytes:
    """Header '<4sBQH' (magic, type, k, dim) followed by dim little-endian doubles."""
    return HEADER.pack(MAGIC, frame.msg_type, frame.k, frame.dim) + frame.payload.tobytes()


def decode_header(data: bytes):
    if len(data) < HEADER_SIZE:
        raise FrameDecodeError(f"Trama truncada: {len(data)} bytes, la cabecera ocupa {HEADER_SIZE}")
    magic, msg_type, k, dim = HEADER.unpack(data[:HEADER_SIZE])
    if magic != MAGIC:
        raise FrameDecodeError(f"Magic inválido: {magic!r}")
    if msg_type not in MSG_TYPES:
        raise FrameDecodeError(f"Tipo de mensaje desconocido: 0x{msg_type:02x}")
    return msg_type, k, dim


def decode_frame(data: bytes) -> ChannelFrame:
    """
    Parse one complete frame.

    Raises:
        FrameDecodeError: Bad magic, unknown type, or a length that does not
            match 15 + 8 * dim bytes.
    """
    msg_type, k, dim = decode_header(data)
    expected = HEADER_SIZE + PAYLOAD_DTYPE.itemsize * dim
    if len(data) != expected:
        raise FrameDecodeError(f"Longitud {len(data)} no coincide con dim={dim} ({expected} bytes)")
    payload = np.frombuffer(data, dtype=PAYLOAD_DTYPE, offset=HEADER_SIZE, count=dim).copy()
    return ChannelFrame(msg_type, k, payload)


def frame_codec(obj: Union[ChannelFrame, bytes]) -> Union[bytes, ChannelFrame]:
    """Encode a frame or decode bytes, whichever is given."""
    if isinstance(obj, ChannelFrame):
        return encode_frame(obj)
    if isinstance(obj, (bytes, bytearray, memoryview)):
        return decode_frame(bytes(obj))
    raise FrameDecodeError(f"No se puede codificar un {type(obj).__name__}")


def read_frame(recv_exact: Callable[[int], bytes]) -> ChannelFrame:
    """Read one frame from a byte source that returns exactly n bytes per call."""
    header = recv_exact(HEADER_SIZE)
    _, _, dim = decode_header(header)
    return decode_frame(header + recv_exact(PAYLOAD_DTYPE.itemsize * dim))
