"""Transports carrying PQC3 frames: in-process and localhost TCP.

Both move the exact same encoded bytes; the socket variant just splits
them across a stream. `recv_frame` reassembles using the declared
length, bounded by the configured payload cap.
"""
from __future__ import annotations

import socket
import struct
import threading
from typing import Callable

from .frames import (
    FRAME_OVERHEAD,
    Frame,
    MAGIC,
    ProtocolError,
    decode_frame,
    encode_frame,
    max_payload_bytes,
)
from .session import ServerSession


class InProcessTransport:
    """Client and server in one process; frames still fully encoded."""

    def __init__(self, session: ServerSession):
        self.session = session

    def round_trip(self, frame: Frame) -> Frame:
        encoded = encode_frame(frame)
        decoded = decode_frame(encoded)  # the server's view
        reply = self.session.handle_frame(decoded)
        return decode_frame(encode_frame(reply))


def _recv_exact(sock: socket.socket, n: int) -> bytes:
    chunks = []
    remaining = n
    while remaining:
        chunk = sock.recv(min(remaining, 1 << 20))
        if not chunk:
            raise ProtocolError("connection closed mid-frame")
        chunks.append(chunk)
        remaining -= len(chunk)
    return b"".join(chunks)


def send_frame(sock: socket.socket, frame: Frame) -> None:
    sock.sendall(encode_frame(frame))


def recv_frame(sock: socket.socket) -> Frame:
    head = _recv_exact(sock, FRAME_OVERHEAD - 4)  # magic + header, no crc yet
    if head[:4] != MAGIC:
        raise ProtocolError("bad magic")
    (length,) = struct.unpack_from("<Q", head, 9)
    if length > max_payload_bytes():
        raise ProtocolError("declared payload exceeds the configured cap")
    rest = _recv_exact(sock, length + 4)
    return decode_frame(head + rest)


class TcpServer:
    """Localhost server; one session per connection, one thread each."""

    def __init__(self, session_factory: Callable[[], ServerSession],
                 host: str = "127.0.0.1", port: int = 0):
        self.session_factory = session_factory
        self._sock = socket.create_server((host, port))
        self.host, self.port = self._sock.getsockname()[:2]
        self._stop = threading.Event()
        self._thread: threading.Thread | None = None

    def serve_background(self) -> "TcpServer":
        self._thread = threading.Thread(target=self.serve_forever, daemon=True)
        self._thread.start()
        return self

    def serve_forever(self) -> None:
        self._sock.settimeout(0.2)
        while not self._stop.is_set():
            try:
                conn, _ = self._sock.accept()
            except socket.timeout:
                continue
            except OSError:
                break
            threading.Thread(target=self._serve_connection, args=(conn,),
                             daemon=True).start()

    def _serve_connection(self, conn: socket.socket) -> None:
        session = self.session_factory()
        with conn:
            while not self._stop.is_set():
                try:
                    frame = recv_frame(conn)
                except (ProtocolError, OSError):
                    return
                send_frame(conn, session.handle_frame(frame))

    def close(self) -> None:
        self._stop.set()
        try:
            self._sock.close()
        except OSError:
            pass
        if self._thread is not None:
            self._thread.join(timeout=2)


class TcpClient:
    def __init__(self, host: str, port: int, timeout: float = 600.0):
        self._sock = socket.create_connection((host, port), timeout=timeout)

    def round_trip(self, frame: Frame) -> Frame:
        send_frame(self._sock, frame)
        return recv_frame(self._sock)

    def close(self) -> None:
        try:
            self._sock.close()
        except OSError:
            pass

    def __enter__(self) -> "TcpClient":
        return self

    def __exit__(self, *exc) -> None:
        self.close()
