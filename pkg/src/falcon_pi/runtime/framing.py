"""Length-prefixed message frames: 4-byte little-endian payload length, 1-byte type, payload."""

from __future__ import annotations

import enum
import hashlib
import socket
import struct
from dataclasses import dataclass

MAX_FRAME = 64 * 1024 * 1024
HEADER = struct.Struct("<IB")


class FrameType(enum.IntEnum):
    HELLO = 1
    PARAMS = 2
    MODEL_META = 3
    CT_UP = 4
    CT_DOWN = 5
    GC_TABLES = 6
    OT_MSG = 7
    SHARE_MSG = 8
    RESULT = 9
    ERROR = 10
    BYE = 11


class ErrorCode(enum.IntEnum):
    PROTOCOL = 1
    CRYPTO = 2
    CAPACITY = 3


class ProtocolError(Exception):
    code = ErrorCode.PROTOCOL


class CryptoError(Exception):
    code = ErrorCode.CRYPTO


class CapacityError(ProtocolError):
    code = ErrorCode.CAPACITY


class RemoteError(ProtocolError):
    """The peer sent an ERROR frame."""

    def __init__(self, code: int, message: str):
        super().__init__(f"peer aborted ({ErrorCode(code).name.lower()}): {message}")
        self.remote_code = ErrorCode(code)


@dataclass(frozen=True)
class MessageFrame:
    type: FrameType
    payload: bytes

    def encode(self) -> bytes:
        if len(self.payload) > MAX_FRAME:
            raise CapacityError("frame exceeds the 64 MiB limit")
        return HEADER.pack(len(self.payload), int(self.type)) + self.payload

    @classmethod
    def decode_header(cls, raw: bytes) -> tuple[int, FrameType]:
        length, kind = HEADER.unpack(raw)
        if length > MAX_FRAME:
            raise CapacityError("announced frame exceeds the 64 MiB limit")
        try:
            return length, FrameType(kind)
        except ValueError:
            raise ProtocolError(f"unknown frame type {kind}") from None


def error_payload(code: ErrorCode, message: str) -> bytes:
    return bytes([int(code)]) + message.encode()[:1024]


class Channel:
    """Frame transport over a connected socket, with byte counters and a running digest.

    ``phase`` labels traffic for the transcript; counters are keyed by (phase, direction).
    """

    def __init__(self, sock: socket.socket):
        self.sock = sock
        self.phase = "handshake"
        self.bytes = {}
        self.frames = {}
        self.digest = hashlib.sha256()
        self.raw_sent = 0
        self.raw_received = 0
        self.rounds = 0
        self._last_dir = None
        self.ot_state = {}  # base OT seeds reused by later extensions on this channel

    def _count(self, direction: str, nbytes: int):
        key = (self.phase, direction)
        self.bytes[key] = self.bytes.get(key, 0) + nbytes
        self.frames[key] = self.frames.get(key, 0) + 1
        if direction != self._last_dir:
            self.rounds += 1
            self._last_dir = direction

    def send(self, kind: FrameType, payload: bytes = b"") -> None:
        data = MessageFrame(kind, payload).encode()
        self.sock.sendall(data)
        self.raw_sent += len(data)
        self.digest.update(b"S" + data)
        self._count("sent", len(data))

    def _read_exact(self, n: int) -> bytes:
        chunks, got = [], 0
        while got < n:
            chunk = self.sock.recv(min(n - got, 1 << 20))
            if not chunk:
                raise ProtocolError("connection closed mid-frame")
            chunks.append(chunk)
            got += len(chunk)
        return b"".join(chunks)

    def recv_frame(self) -> MessageFrame:
        head = self._read_exact(HEADER.size)
        length, kind = MessageFrame.decode_header(head)
        payload = self._read_exact(length)
        self.raw_received += HEADER.size + length
        self.digest.update(b"R" + head + payload)
        self._count("received", HEADER.size + length)
        return MessageFrame(kind, payload)

    def recv(self, expected: FrameType) -> bytes:
        frame = self.recv_frame()
        if frame.type == FrameType.ERROR and expected != FrameType.ERROR:
            code = frame.payload[0] if frame.payload else int(ErrorCode.PROTOCOL)
            try:
                code = ErrorCode(code)
            except ValueError:
                code = ErrorCode.PROTOCOL
            raise RemoteError(code, frame.payload[1:].decode(errors="replace"))
        if frame.type != expected:
            raise ProtocolError(f"expected {expected.name}, got {frame.type.name}")
        return frame.payload

    def send_error(self, code: ErrorCode, message: str) -> None:
        try:
            self.send(FrameType.ERROR, error_payload(code, message))
        except OSError:
            pass

    def close(self):
        try:
            self.sock.close()
        except OSError:
            pass
