"""Robot/cloud runtime: wire format, release server, press client.

Wire format (little-endian, 20-byte header):

    offset  size  field
    0       4     magic  b"ELRS"
    4       1     version (0x01)
    5       1     msg_type: 0 FRAME, 1 RESULT, 2 PING, 3 ERROR
    6       8     frame_id (u64)
    14      2     split_index (u16)
    16      4     payload_len (u32)
    20      ...   payload

A FRAME carries the bytes crossing the split; the release node executes the
stages from split_index onward and answers with a RESULT holding the final
output and the same frame_id.  ERROR replies carry a short ASCII reason token
as payload.  Malformed traffic gets exactly one ERROR; bad magic or a
truncated message destroys framing, so the connection closes after that reply,
while well-framed semantic errors (bad version, bad split) keep it open.

Stage execution is a deterministic byte transformation (SHAKE-256 of the stage
name and its input, expanded to the declared output size), which makes
split-anywhere equivalence exactly testable without shipping real models.

The press client owns the timeout/fallback policy: offloads that time out or
hit a dead endpoint are recomputed locally from the already-produced
intermediate, so every frame yields a result. Timeouts default to 5x the
rolling mean round trip with a 1 s floor.
"""

from __future__ import annotations

import hashlib
import logging
import socket
import struct
import threading
import time
from collections import deque
from dataclasses import dataclass

from .actions import Action, Pipeline

logger = logging.getLogger(__name__)

MAGIC = b"ELRS"
VERSION = 1
HEADER = struct.Struct("<4sBBQHI")
HEADER_SIZE = HEADER.size  # 20 bytes

MSG_FRAME = 0
MSG_RESULT = 1
MSG_PING = 2
MSG_ERROR = 3

MAX_PAYLOAD = 64 * 1024 * 1024  # sanity bound against garbage length fields


class ProtocolError(Exception):
    pass


class BadMagic(ProtocolError):
    pass


class UnsupportedVersion(ProtocolError):
    pass


class Truncated(ProtocolError):
    pass


@dataclass(frozen=True)
class Message:
    msg_type: int
    frame_id: int
    split_index: int
    payload: bytes


def encode_message(msg_type: int, frame_id: int, split_index: int, payload: bytes = b"") -> bytes:
    if len(payload) > MAX_PAYLOAD:
        raise ProtocolError(f"payload of {len(payload)} bytes exceeds {MAX_PAYLOAD}")
    return HEADER.pack(MAGIC, VERSION, msg_type, frame_id, split_index, len(payload)) + payload


def decode_message(data: bytes) -> Message:
    """Decode one complete message from a byte buffer."""
    if len(data) < HEADER_SIZE:
        raise Truncated(f"need {HEADER_SIZE} header bytes, have {len(data)}")
    magic, version, msg_type, frame_id, split_index, payload_len = HEADER.unpack_from(data)
    if magic != MAGIC:
        raise BadMagic(f"bad magic {magic!r}")
    if version != VERSION:
        raise UnsupportedVersion(f"version {version} not supported (expected {VERSION})")
    if payload_len > MAX_PAYLOAD:
        raise ProtocolError(f"declared payload of {payload_len} bytes exceeds {MAX_PAYLOAD}")
    if len(data) < HEADER_SIZE + payload_len:
        raise Truncated(
            f"payload truncated: declared {payload_len}, have {len(data) - HEADER_SIZE}"
        )
    payload = data[HEADER_SIZE : HEADER_SIZE + payload_len]
    return Message(msg_type, frame_id, split_index, payload)


# Wire-framing names used at the call sites that speak the protocol directly.
encode_frame = encode_message
decode_frame = decode_message


def _recv_exact(conn: socket.socket, n: int, *, at_boundary: bool = False) -> bytes | None:
    """Read exactly n bytes; None on clean EOF at a message boundary."""
    chunks = []
    got = 0
    while got < n:
        chunk = conn.recv(min(n - got, 1 << 16))
        if not chunk:
            if got == 0 and at_boundary:
                return None
            raise Truncated(f"connection closed mid-message ({got}/{n} bytes)")
        chunks.append(chunk)
        got += len(chunk)
    return b"".join(chunks)


def read_message(conn: socket.socket) -> Message | None:
    """Read one message from a stream socket; None on clean EOF."""
    header = _recv_exact(conn, HEADER_SIZE, at_boundary=True)
    if header is None:
        return None
    magic, version, msg_type, frame_id, split_index, payload_len = HEADER.unpack(header)
    if magic != MAGIC:
        raise BadMagic(f"bad magic {magic!r}")
    if version != VERSION:
        raise UnsupportedVersion(f"version {version} not supported (expected {VERSION})")
    if payload_len > MAX_PAYLOAD:
        raise ProtocolError(f"declared payload of {payload_len} bytes exceeds {MAX_PAYLOAD}")
    payload = _recv_exact(conn, payload_len) if payload_len else b""
    return Message(msg_type, frame_id, split_index, payload)


# ---------------------------------------------------------------------------
# Deterministic synthetic stage execution


def run_stage(stage, data: bytes) -> bytes:
    """Pure bytes -> bytes transformation standing in for a real model stage."""
    seed = hashlib.shake_256(stage.name.encode() + b"\x00" + data)
    return seed.digest(stage.output_bytes)


def execute_stages(pipeline: Pipeline, data: bytes, start: int, stop: int | None = None) -> bytes:
    """Run stages [start, stop) in order; stop defaults to the pipeline end."""
    stop = pipeline.n_stages if stop is None else stop
    if not 0 <= start <= stop <= pipeline.n_stages:
        raise ValueError(f"invalid stage range [{start}, {stop})")
    for stage in pipeline.stages[start:stop]:
        data = run_stage(stage, data)
    return data


# ---------------------------------------------------------------------------
# Release node (cloud side)


class ReleaseServer:
    """Threaded TCP server executing pipeline suffixes on request.

    Stateless across frames: every FRAME is fully described by its split index
    and payload.  ``throttle_bytes_per_s`` simulates a shaped ingress link by
    pacing reads of the request payload (test and demo aid).
    """

    def __init__(
        self,
        listen: str,
        pipeline: Pipeline,
        throttle_bytes_per_s: float | None = None,
    ):
        host, port = parse_endpoint(listen)
        self.pipeline = pipeline
        self.throttle = throttle_bytes_per_s
        self._sock = socket.create_server((host, port))
        self.address = self._sock.getsockname()[:2]
        self._shutdown = threading.Event()
        self._conns: set[socket.socket] = set()
        self._lock = threading.Lock()
        self.frames_served = 0
        self.errors_sent = 0
        self._thread = threading.Thread(target=self._accept_loop, daemon=True)

    @property
    def endpoint(self) -> str:
        return f"{self.address[0]}:{self.address[1]}"

    def start(self) -> "ReleaseServer":
        self._thread.start()
        return self

    def _accept_loop(self):
        while not self._shutdown.is_set():
            try:
                conn, _ = self._sock.accept()
            except OSError:
                break
            with self._lock:
                self._conns.add(conn)
            threading.Thread(target=self._serve_conn, args=(conn,), daemon=True).start()

    def _send(self, conn, msg_type, frame_id, split, payload=b""):
        if msg_type == MSG_ERROR:
            self.errors_sent += 1
        try:
            conn.sendall(encode_message(msg_type, frame_id, split, payload))
        except OSError:
            pass

    def _serve_conn(self, conn: socket.socket):
        try:
            while not self._shutdown.is_set():
                try:
                    msg = read_message(conn)
                except BadMagic:
                    self._send(conn, MSG_ERROR, 0, 0, b"bad-magic")
                    return  # framing lost, cannot resync
                except UnsupportedVersion:
                    self._send(conn, MSG_ERROR, 0, 0, b"bad-version")
                    continue  # header was well-formed, stream still aligned
                except Truncated:
                    self._send(conn, MSG_ERROR, 0, 0, b"truncated")
                    return
                except ProtocolError:
                    self._send(conn, MSG_ERROR, 0, 0, b"oversize")
                    return  # oversize payload left unread, framing lost
                if msg is None:
                    return  # peer closed cleanly
                self._dispatch(conn, msg)
        finally:
            with self._lock:
                self._conns.discard(conn)
            conn.close()

    def _dispatch(self, conn: socket.socket, msg: Message):
        if msg.msg_type == MSG_PING:
            self._send(conn, MSG_PING, msg.frame_id, msg.split_index)
            return
        if msg.msg_type != MSG_FRAME:
            self._send(conn, MSG_ERROR, msg.frame_id, msg.split_index, b"unexpected-type")
            return
        n = self.pipeline.n_stages
        if msg.split_index == n:
            # pure-local split: nothing to execute remotely
            self._send(conn, MSG_ERROR, msg.frame_id, msg.split_index, b"pure-local-split")
            return
        if msg.split_index > n:
            self._send(conn, MSG_ERROR, msg.frame_id, msg.split_index, b"bad-split")
            return
        if self.throttle:
            time.sleep(len(msg.payload) / self.throttle)
        result = execute_stages(self.pipeline, msg.payload, msg.split_index)
        self.frames_served += 1
        self._send(conn, MSG_RESULT, msg.frame_id, msg.split_index, result)

    def stop(self):
        self._shutdown.set()
        try:
            # close() alone leaves a blocked accept() sleeping; shut it down first
            self._sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        try:
            self._sock.close()
        except OSError:
            pass
        with self._lock:
            conns = list(self._conns)
        for conn in conns:
            try:
                conn.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass
            conn.close()
        if self._thread.is_alive():
            self._thread.join(timeout=2.0)

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.stop()


def serve_release(listen: str, pipeline: Pipeline, **kwargs) -> ReleaseServer:
    """Start a release node and return its handle (caller stops it)."""
    return ReleaseServer(listen, pipeline, **kwargs).start()


def parse_endpoint(value: str) -> tuple[str, int]:
    host, sep, port = value.rpartition(":")
    if not sep or not port.isdigit():
        raise ValueError(f"endpoint must look like host:port, got {value!r}")
    return host or "127.0.0.1", int(port)


# ---------------------------------------------------------------------------
# Press node (robot side)


@dataclass
class PressResult:
    payload: bytes
    total_latency: float
    local_time: float
    elastic_latency: float | None  # None when nothing was measured (dead link)
    timed_out: bool = False
    fell_back: bool = False
    error_reason: str | None = None


class PressClient:
    """Persistent connection to one release node, with timeout bookkeeping."""

    def __init__(self, endpoint: str, timeout_floor: float = 1.0, timeout_factor: float = 5.0):
        self.endpoint = endpoint
        self.timeout_floor = timeout_floor
        self.timeout_factor = timeout_factor
        self._sock: socket.socket | None = None
        self._rtts: deque[float] = deque(maxlen=64)

    def current_timeout(self) -> float:
        if not self._rtts:
            return self.timeout_floor
        mean_rtt = sum(self._rtts) / len(self._rtts)
        return max(self.timeout_floor, self.timeout_factor * mean_rtt)

    def _connect(self) -> socket.socket:
        if self._sock is None:
            host, port = parse_endpoint(self.endpoint)
            self._sock = socket.create_connection((host, port), timeout=self.timeout_floor)
        return self._sock

    def _drop_connection(self):
        if self._sock is not None:
            try:
                self._sock.close()
            except OSError:
                pass
            self._sock = None

    def ping(self, frame_id: int = 0) -> float:
        """Round-trip time of an empty control message."""
        sock = self._connect()
        sock.settimeout(self.current_timeout())
        start = time.perf_counter()
        sock.sendall(encode_message(MSG_PING, frame_id, 0))
        reply = read_message(sock)
        rtt = time.perf_counter() - start
        if reply is None or reply.msg_type != MSG_PING or reply.frame_id != frame_id:
            self._drop_connection()
            raise ProtocolError("ping reply missing or mismatched")
        self._rtts.append(rtt)
        return rtt

    def offload(self, frame_id: int, split_index: int, payload: bytes) -> tuple[bytes, float]:
        """Send one FRAME and wait for its RESULT; returns (output, round trip)."""
        sock = self._connect()
        timeout = self.current_timeout()
        sock.settimeout(timeout)
        start = time.perf_counter()
        sock.sendall(encode_message(MSG_FRAME, frame_id, split_index, payload))
        reply = read_message(sock)
        rtt = time.perf_counter() - start
        if reply is None:
            self._drop_connection()
            raise Truncated("connection closed before RESULT")
        if reply.msg_type == MSG_ERROR:
            raise ProtocolError(f"release node refused frame: {reply.payload.decode(errors='replace')}")
        if reply.msg_type != MSG_RESULT or reply.frame_id != frame_id:
            self._drop_connection()
            raise ProtocolError(
                f"expected RESULT for frame {frame_id}, got type {reply.msg_type} "
                f"frame {reply.frame_id}"
            )
        self._rtts.append(rtt)
        return reply.payload, rtt

    def close(self):
        self._drop_connection()


def press_execute(
    frame: bytes,
    action: Action,
    pipeline: Pipeline,
    client: PressClient | None = None,
    frame_id: int = 0,
) -> PressResult:
    """Execute one frame under the given split, offloading the suffix.

    Pure-local actions never touch the network.  Offload failures fall back to
    local execution of the remaining stages, so a result always comes back;
    timeouts report the timeout bound as the (pessimistic) elastic latency,
    dead links report None.
    """
    start = time.perf_counter()
    prefix = execute_stages(pipeline, frame, 0, action.split_index)
    local_time = time.perf_counter() - start

    if action.is_pure_local:
        return PressResult(
            payload=prefix,
            total_latency=local_time,
            local_time=local_time,
            elastic_latency=0.0,
        )
    if client is None:
        raise ValueError("non-local action needs a press client")

    timeout = client.current_timeout()
    try:
        payload, rtt = client.offload(frame_id, action.split_index, prefix)
        return PressResult(
            payload=payload,
            total_latency=local_time + rtt,
            local_time=local_time,
            elastic_latency=rtt,
        )
    except (TimeoutError, socket.timeout):
        client._drop_connection()  # a late reply would desync the stream
        logger.warning("frame %d timed out after %.3fs; recomputing locally", frame_id, timeout)
        fallback_start = time.perf_counter()
        payload = execute_stages(pipeline, prefix, action.split_index)
        fallback_time = time.perf_counter() - fallback_start
        return PressResult(
            payload=payload,
            total_latency=local_time + timeout + fallback_time,
            local_time=local_time + fallback_time,
            elastic_latency=timeout,  # pessimistic: charge the full wait
            timed_out=True,
            fell_back=True,
        )
    except (OSError, ProtocolError) as exc:
        client._drop_connection()
        logger.warning("offload of frame %d failed (%s); recomputing locally", frame_id, exc)
        fallback_start = time.perf_counter()
        payload = execute_stages(pipeline, prefix, action.split_index)
        fallback_time = time.perf_counter() - fallback_start
        return PressResult(
            payload=payload,
            total_latency=local_time + fallback_time,
            local_time=local_time + fallback_time,
            elastic_latency=None,
            fell_back=True,
            error_reason=str(exc),
        )


def local_fallback_window(policy_state) -> bool:
    """True while drift recovery makes the local path authoritative.

    During the window, offloads still run (their latencies feed the learner)
    but the result handed downstream must come from a concurrent pure-local
    execution, so consumers never see a half-trained model's choices.
    """
    return bool(getattr(policy_state, "update_window", False))
