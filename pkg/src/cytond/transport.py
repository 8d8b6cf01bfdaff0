"""Byte transports between the daemon and a device.

The daemon only ever sees this interface: ``read``/``write``/``close`` on
an opaque full-duplex byte stream. Concrete backends: an in-memory pipe
(simulator), a POSIX serial port, and anything file-descriptor based
(e.g. one end of a pty).
"""

from __future__ import annotations

import os
import select
import threading


class TransportClosed(Exception):
    """The peer is gone. Reads past buffered data and all writes raise this."""


class TransportUnavailable(Exception):
    """The transport could not be opened (device absent, radio down)."""


class Transport:
    def read(self, max_bytes: int, timeout: float) -> bytes:
        """Up to ``max_bytes``; b"" on timeout; TransportClosed at EOF."""
        raise NotImplementedError

    def write(self, data: bytes) -> None:
        raise NotImplementedError

    def close(self) -> None:
        raise NotImplementedError


class _PipeBuf:
    """One direction of an in-memory pipe: a byte FIFO with a closed flag."""

    def __init__(self):
        self._buf = bytearray()
        self._cond = threading.Condition()
        self._closed = False

    def write(self, data: bytes) -> None:
        with self._cond:
            if self._closed:
                raise TransportClosed("pipe closed")
            self._buf.extend(data)
            self._cond.notify_all()

    def read(self, max_bytes: int, timeout: float) -> bytes:
        with self._cond:
            if not self._buf and not self._closed:
                self._cond.wait(timeout)
            if self._buf:
                n = min(max_bytes, len(self._buf))
                out = bytes(self._buf[:n])
                del self._buf[:n]
                return out
            if self._closed:
                raise TransportClosed("pipe closed")
            return b""

    def close(self) -> None:
        with self._cond:
            self._closed = True
            self._cond.notify_all()

    @property
    def closed(self) -> bool:
        return self._closed


class PipeTransport(Transport):
    """One endpoint of an in-memory duplex pipe."""

    def __init__(self, rx: _PipeBuf, tx: _PipeBuf):
        self._rx = rx
        self._tx = tx
        self.on_write = None  # optional hook: called with data after a write

    def read(self, max_bytes: int, timeout: float) -> bytes:
        return self._rx.read(max_bytes, timeout)

    def write(self, data: bytes) -> None:
        self._tx.write(data)
        if self.on_write is not None:
            self.on_write(data)

    def close(self) -> None:
        self._rx.close()
        self._tx.close()

    @property
    def closed(self) -> bool:
        return self._rx.closed and self._tx.closed


def pipe_pair() -> tuple[PipeTransport, PipeTransport]:
    """A connected pair of in-memory duplex endpoints."""
    a_to_b = _PipeBuf()
    b_to_a = _PipeBuf()
    a = PipeTransport(rx=b_to_a, tx=a_to_b)
    b = PipeTransport(rx=a_to_b, tx=b_to_a)
    return a, b


class FdTransport(Transport):
    """Transport over a raw file descriptor (serial port, pty)."""

    def __init__(self, fd: int):
        self._fd = fd
        self._closed = False

    def read(self, max_bytes: int, timeout: float) -> bytes:
        if self._closed:
            raise TransportClosed("fd closed")
        try:
            r, _, _ = select.select([self._fd], [], [], timeout)
            if not r:
                return b""
            data = os.read(self._fd, max_bytes)
        except OSError as e:
            raise TransportClosed(str(e)) from e
        if data == b"":
            raise TransportClosed("EOF")
        return data

    def write(self, data: bytes) -> None:
        if self._closed:
            raise TransportClosed("fd closed")
        try:
            while data:
                n = os.write(self._fd, data)
                data = data[n:]
        except OSError as e:
            raise TransportClosed(str(e)) from e

    def close(self) -> None:
        if not self._closed:
            self._closed = True
            try:
                os.close(self._fd)
            except OSError:
                pass


def open_serial(path: str, baudrate: int = 115200) -> FdTransport:
    """Open a POSIX serial device in raw 8N1 mode."""
    import termios

    try:
        fd = os.open(path, os.O_RDWR | os.O_NOCTTY | os.O_NONBLOCK)
    except OSError as e:
        raise TransportUnavailable(f"cannot open {path}: {e}") from e
    try:
        attrs = termios.tcgetattr(fd)
        # raw mode, no flow control
        attrs[0] = 0  # iflag
        attrs[1] = 0  # oflag
        attrs[2] = termios.CS8 | termios.CREAD | termios.CLOCAL  # cflag
        attrs[3] = 0  # lflag
        baud = getattr(termios, f"B{baudrate}", None)
        if baud is not None:
            attrs[4] = baud
            attrs[5] = baud
        attrs[6][termios.VMIN] = 0
        attrs[6][termios.VTIME] = 0
        termios.tcsetattr(fd, termios.TCSANOW, attrs)
    except termios.error:
        # not a tty (e.g. a plain file or socket path); use it as-is
        pass
    return FdTransport(fd)
