"""Real-time recognition and frequency-mapping service.

Three cooperating roles, joined by a bounded freshest-wins queue:

* receiver: reads datagrams from the listen port, validates and reassembles
  chunks, and enqueues completed frames. Malformed datagrams bump a counter
  and are otherwise ignored; frames whose chunks disagree structurally get
  an immediate decode-error reply.
* inference worker: the only thread that touches the model. Classifies each
  frame, maps the winning mode to its benchmark frequency through the
  registry, and dispatches the reply.
* bridge: a TCP listener speaking newline-delimited JSON for interactive
  clients; frame requests share the same inference queue, pattern requests
  are rendered inline.

UDP replies go to the observed source address of the frame's chunks, on the
configured reply port. When the queue is full the oldest job is evicted so
a live installation always plays the freshest pattern. No lock is held
across a socket operation or an inference call.
"""

from __future__ import annotations

import base64
import io
import json
import socket
import struct
import threading
import time
from collections import deque
from dataclasses import dataclass, field

import numpy as np
from PIL import Image

from .checkpoint import Checkpoint
from .dataset import image_to_input, pattern_for_mode
from .neural import softmax
from .registry import ModeRegistry
from .wire import (
    MalformedDatagram,
    ResultMessage,
    STATUS_DECODE_ERROR,
    STATUS_LOW_CONFIDENCE,
    STATUS_OK,
    FrameAssembler,
    decode_chunk,
    encode_frame,
    encode_result,
)

__all__ = ["ServiceConfig", "MappingService", "serve", "full_link_latency"]


@dataclass(frozen=True)
class ServiceConfig:
    listen_port: int = 9000
    reply_port: int = 9001
    bridge_port: int = 9002
    reassembly_timeout_ms: float = 200.0
    confidence_floor: float = 0.5
    queue_capacity: int = 4
    host: str = "127.0.0.1"

    def __post_init__(self):
        ports = (self.listen_port, self.reply_port, self.bridge_port)
        if len(set(ports)) != len(ports):
            raise ValueError("listen, reply, and bridge ports must be distinct")
        if self.queue_capacity < 1:
            raise ValueError("queue_capacity must be positive")


@dataclass
class _Job:
    frame_id: int
    pixels: np.ndarray
    reply: object  # callable(ResultMessage)
    on_evicted: object = None  # optional callable()


class _FreshestQueue:
    """Bounded FIFO that evicts its oldest element instead of blocking."""

    def __init__(self, capacity: int):
        self.capacity = capacity
        self._items: deque = deque()
        self._cond = threading.Condition()

    def put(self, item) -> object | None:
        """Append; returns the evicted element if the queue was full."""
        with self._cond:
            evicted = self._items.popleft() if len(self._items) >= self.capacity else None
            self._items.append(item)
            self._cond.notify()
            return evicted

    def get(self, timeout: float):
        with self._cond:
            if not self._items:
                self._cond.wait(timeout)
            return self._items.popleft() if self._items else None


class _Counters:
    def __init__(self):
        self._lock = threading.Lock()
        self._values: dict[str, int] = {}

    def bump(self, name: str, by: int = 1) -> None:
        with self._lock:
            self._values[name] = self._values.get(name, 0) + by

    def snapshot(self) -> dict[str, int]:
        with self._lock:
            return dict(self._values)


class MappingService:
    def __init__(self, config: ServiceConfig, checkpoint: Checkpoint,
                 registry: ModeRegistry):
        if checkpoint.config.num_classes != len(registry):
            raise ValueError("checkpoint classes do not match registry size")
        self.config = config
        self.registry = registry
        self.model = checkpoint.build()
        self.counters = _Counters()
        self.queue = _FreshestQueue(config.queue_capacity)
        self._shutdown = threading.Event()
        self._threads: list[threading.Thread] = []
        self._listen_sock: socket.socket | None = None
        self._reply_sock: socket.socket | None = None
        self._bridge_sock: socket.socket | None = None

    # -- lifecycle ---------------------------------------------------------

    def start(self) -> None:
        cfg = self.config
        try:
            self._listen_sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
            self._listen_sock.bind((cfg.host, cfg.listen_port))
            self._bridge_sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
            self._bridge_sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
            self._bridge_sock.bind((cfg.host, cfg.bridge_port))
            self._bridge_sock.listen(8)
        except OSError as exc:
            self.stop()
            raise OSError(f"service start failed binding sockets: {exc}") from exc
        self._listen_sock.settimeout(0.05)
        self._bridge_sock.settimeout(0.2)
        self._reply_sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        for target in (self._recv_loop, self._worker_loop, self._bridge_loop):
            t = threading.Thread(target=target, daemon=True, name=target.__name__)
            t.start()
            self._threads.append(t)

    def stop(self) -> None:
        self._shutdown.set()
        for t in self._threads:
            t.join(timeout=5.0)
        self._threads.clear()
        for sock in (self._listen_sock, self._reply_sock, self._bridge_sock):
            if sock is not None:
                sock.close()
        self._listen_sock = self._reply_sock = self._bridge_sock = None

    # -- inference ---------------------------------------------------------

    def classify(self, pixels: np.ndarray, frame_id: int) -> ResultMessage:
        start = time.perf_counter()
        x = image_to_input(pixels, self.model.config.image_size)[None]
        probs = softmax(self.model.logits(x))[0]
        elapsed_ms = (time.perf_counter() - start) * 1e3
        mode_id = int(probs.argmax())
        confidence = float(probs[mode_id])
        entry = self.registry[mode_id]
        low = confidence < self.config.confidence_floor
        return ResultMessage(
            frame_id=frame_id,
            status=STATUS_LOW_CONFIDENCE if low else STATUS_OK,
            mode_id=mode_id,
            n=entry.order.n,
            m=entry.order.m,
            frequency_hz=0.0 if low else entry.frequency_hz,
            confidence=confidence,
            nodal_lines=entry.nodal_lines,
            inference_ms=elapsed_ms,
        )

    # -- receiver ----------------------------------------------------------

    def _recv_loop(self) -> None:
        assembler = FrameAssembler(self.config.reassembly_timeout_ms)
        while not self._shutdown.is_set():
            try:
                datagram, addr = self._listen_sock.recvfrom(65535)
            except socket.timeout:
                self.counters.bump("dropped_frames", assembler.purge(time.monotonic()))
                continue
            except OSError:
                break
            try:
                chunk = decode_chunk(datagram)
            except MalformedDatagram:
                self.counters.bump("malformed_datagrams")
                continue
            done = assembler.add(chunk, time.monotonic(), addr)
            self.counters.bump("dropped_frames", assembler.purge(time.monotonic()))
            if done is None:
                continue
            if done.pixels is None:
                self.counters.bump("decode_errors")
                self._send_udp_result(
                    ResultMessage(done.frame_id, STATUS_DECODE_ERROR), done.source
                )
                continue
            self._enqueue(
                _Job(done.frame_id, done.pixels,
                     reply=lambda msg, source=done.source:
                     self._send_udp_result(msg, source))
            )

    def _enqueue(self, job: _Job) -> None:
        evicted = self.queue.put(job)
        if evicted is not None:
            self.counters.bump("evicted_frames")
            if evicted.on_evicted is not None:
                evicted.on_evicted()

    def _send_udp_result(self, msg: ResultMessage, source) -> None:
        if source is None or self._reply_sock is None:
            return
        try:
            self._reply_sock.sendto(encode_result(msg),
                                    (source[0], self.config.reply_port))
            self.counters.bump("replies_sent")
        except OSError:
            pass

    # -- worker ------------------------------------------------------------

    def _worker_loop(self) -> None:
        while not self._shutdown.is_set():
            job = self.queue.get(timeout=0.1)
            if job is None:
                continue
            try:
                result = self.classify(job.pixels, job.frame_id)
            except Exception:
                result = ResultMessage(job.frame_id, STATUS_DECODE_ERROR)
                self.counters.bump("decode_errors")
            job.reply(result)

    # -- bridge ------------------------------------------------------------

    def _bridge_loop(self) -> None:
        while not self._shutdown.is_set():
            try:
                conn, _ = self._bridge_sock.accept()
            except socket.timeout:
                continue
            except OSError:
                break
            t = threading.Thread(target=self._bridge_client, args=(conn,),
                                 daemon=True)
            t.start()

    def _bridge_client(self, conn: socket.socket) -> None:
        conn.settimeout(0.2)
        lock = threading.Lock()

        def send(obj: dict) -> bool:
            try:
                with lock:
                    conn.sendall(json.dumps(obj).encode("utf-8") + b"\n")
                return True
            except OSError:
                return False

        buffer = b""
        try:
            while not self._shutdown.is_set():
                try:
                    data = conn.recv(65536)
                except socket.timeout:
                    continue
                except OSError:
                    break
                if not data:
                    break
                buffer += data
                while b"\n" in buffer:
                    line, buffer = buffer.split(b"\n", 1)
                    if line.strip():
                        self._handle_bridge_line(line, send)
        finally:
            conn.close()

    def _handle_bridge_line(self, line: bytes, send) -> None:
        try:
            msg = json.loads(line.decode("utf-8"))
            if not isinstance(msg, dict):
                raise ValueError("expected a JSON object")
            kind = msg.get("type")
            if kind == "ping":
                send({"type": "pong", "version": 1})
            elif kind == "frame":
                self._bridge_frame(msg, send)
            elif kind == "pattern_request":
                self._bridge_pattern(msg, send)
            else:
                raise ValueError(f"unknown message type {kind!r}")
        except (ValueError, KeyError, TypeError) as exc:
            send({"type": "error", "code": "bad_request", "message": str(exc)})

    def _bridge_frame(self, msg: dict, send) -> None:
        frame_id = int(msg["frame_id"])
        width, height = int(msg["width"]), int(msg["height"])
        raw = base64.b64decode(msg["pixels_b64"])
        if len(raw) != width * height * 3:
            raise ValueError("pixels_b64 does not match width*height*3 bytes")
        pixels = np.frombuffer(raw, dtype=np.uint8).reshape(height, width, 3)
        done = threading.Event()
        slot: dict[str, ResultMessage] = {}

        def resolve(result: ResultMessage) -> None:
            slot["result"] = result
            done.set()

        self._enqueue(_Job(frame_id, pixels, reply=resolve, on_evicted=done.set))
        if not done.wait(timeout=10.0) or "result" not in slot:
            send({"type": "error", "code": "overloaded",
                  "message": "frame evicted before inference"})
            return
        r = slot["result"]
        send({
            "type": "result",
            "frame_id": r.frame_id,
            "status": r.status,
            "mode_id": r.mode_id,
            "n": r.n,
            "m": r.m,
            "frequency_hz": r.frequency_hz,
            "confidence": r.confidence,
            "nodal_lines": r.nodal_lines,
            "inference_ms": r.inference_ms,
        })

    def _bridge_pattern(self, msg: dict, send) -> None:
        mode_id = int(msg["mode_id"])
        seed = int(msg.get("seed", 0))
        size = int(msg.get("size", self.model.config.image_size))
        entry = self.registry[mode_id]
        image = pattern_for_mode(self.registry, mode_id, size, seed)
        buf = io.BytesIO()
        Image.fromarray(image.pixels).save(buf, format="PNG")
        send({
            "type": "pattern",
            "mode_id": mode_id,
            "png_b64": base64.b64encode(buf.getvalue()).decode("ascii"),
            "frequency_hz": entry.frequency_hz,
        })


def serve(config: ServiceConfig, checkpoint: Checkpoint, registry: ModeRegistry,
          shutdown: threading.Event | None = None) -> None:
    """Run the service until interrupted (or the provided event is set)."""
    service = MappingService(config, checkpoint, registry)
    service.start()
    try:
        while not service._shutdown.is_set():
            if shutdown is not None and shutdown.is_set():
                break
            time.sleep(0.1)
    except KeyboardInterrupt:
        pass
    finally:
        service.stop()


def full_link_latency(config: ServiceConfig, checkpoint: Checkpoint,
                      registry: ModeRegistry, frames: int = 1000,
                      timeout_s: float = 2.0) -> dict:
    """Loopback benchmark of the entire encode/send/infer/reply path.

    Streams rendered mode patterns one at a time and measures the round trip
    from first datagram out to result datagram in.
    """
    if frames < 1:
        raise ValueError("frames must be positive")
    size = checkpoint.config.image_size
    images = [
        pattern_for_mode(registry, entry.mode_id, size, seed=entry.mode_id).pixels
        for entry in registry
    ]
    service = MappingService(config, checkpoint, registry)
    service.start()
    rx = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
    tx = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
    try:
        rx.bind((config.host, config.reply_port))
        rx.settimeout(timeout_s)
        target = (config.host, config.listen_port)
        times = []
        dropped = 0
        for i in range(frames):
            datagrams = encode_frame(images[i % len(images)], frame_id=i)
            start = time.perf_counter()
            for d in datagrams:
                tx.sendto(d, target)
            while True:
                try:
                    reply, _ = rx.recvfrom(65535)
                except socket.timeout:
                    dropped += 1
                    break
                if struct.unpack_from("<I", reply, 5)[0] == i:
                    times.append((time.perf_counter() - start) * 1e3)
                    break
        return {
            "mean_ms": float(np.mean(times)) if times else float("nan"),
            "max_ms": float(np.max(times)) if times else float("nan"),
            "dropped": dropped,
            "measured": len(times),
        }
    finally:
        rx.close()
        tx.close()
        service.stop()
