"""Mapping service: UDP loop mechanics, the bridge protocol, and overload
behavior. Recognition accuracy against the trained desk checkpoint is
covered by the acceptance suite; these tests use a small untrained model
and verify the plumbing contracts.
"""

import base64
import io
import json
import socket
import time

import numpy as np
import pytest
from PIL import Image

from chladni_studio.dataset import pattern_for_mode
from chladni_studio.service import MappingService, ServiceConfig, full_link_latency
from chladni_studio.wire import (
    STATUS_DECODE_ERROR,
    STATUS_LOW_CONFIDENCE,
    STATUS_OK,
    decode_result,
    encode_frame,
)


@pytest.fixture
def running_service(tiny_checkpoint, registry, service_ports):
    cfg = ServiceConfig(**service_ports, confidence_floor=0.0)
    service = MappingService(cfg, tiny_checkpoint[0], registry)
    service.start()
    yield service, cfg
    service.stop()


def _udp_exchange(cfg, datagrams, timeout=3.0, expect=1):
    rx = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
    tx = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
    try:
        rx.bind((cfg.host, cfg.reply_port))
        rx.settimeout(timeout)
        for d in datagrams:
            tx.sendto(d, (cfg.host, cfg.listen_port))
        replies = []
        for _ in range(expect):
            try:
                data, _ = rx.recvfrom(65535)
            except socket.timeout:
                break
            replies.append(decode_result(data))
        return replies
    finally:
        rx.close()
        tx.close()


def _bridge_connect(cfg, timeout=5.0) -> socket.socket:
    conn = socket.create_connection((cfg.host, cfg.bridge_port), timeout=timeout)
    conn.settimeout(timeout)
    return conn


def _bridge_call(conn, obj) -> dict:
    conn.sendall(json.dumps(obj).encode() + b"\n")
    buf = b""
    while b"\n" not in buf:
        data = conn.recv(65536)
        if not data:
            raise ConnectionError("bridge closed")
        buf += data
    line, _ = buf.split(b"\n", 1)
    return json.loads(line)


class TestServiceConfig:
    def test_duplicate_ports_rejected(self):
        with pytest.raises(ValueError, match="distinct"):
            ServiceConfig(listen_port=9000, reply_port=9000)

    def test_class_count_checked(self, tiny_checkpoint, toy_registry):
        with pytest.raises(ValueError, match="classes"):
            MappingService(ServiceConfig(), tiny_checkpoint[0], toy_registry)


class TestUdpLoop:
    def test_round_trip_reports_registry_frequency(self, running_service,
                                                   registry):
        service, cfg = running_service
        img = pattern_for_mode(registry, 0, 64, seed=1)
        replies = _udp_exchange(cfg, encode_frame(img.pixels, frame_id=77))
        assert len(replies) == 1
        result = replies[0]
        assert result.frame_id == 77
        assert result.status == STATUS_OK
        entry = registry[result.mode_id]
        assert result.frequency_hz == np.float32(entry.frequency_hz)
        assert (result.n, result.m) == (entry.order.n, entry.order.m)
        assert result.nodal_lines == entry.nodal_lines
        assert result.inference_ms > 0

    def test_malformed_datagram_counted_not_fatal(self, running_service,
                                                  registry):
        service, cfg = running_service
        tx = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        tx.sendto(b"garbage-not-a-chunk", (cfg.host, cfg.listen_port))
        tx.close()
        deadline = time.time() + 2.0
        while time.time() < deadline:
            if service.counters.snapshot().get("malformed_datagrams", 0) >= 1:
                break
            time.sleep(0.02)
        assert service.counters.snapshot().get("malformed_datagrams", 0) == 1
        img = pattern_for_mode(registry, 1, 64, seed=2)
        replies = _udp_exchange(cfg, encode_frame(img.pixels, frame_id=5))
        assert replies and replies[0].status == STATUS_OK

    def test_inconsistent_chunks_get_decode_error(self, running_service,
                                                  registry):
        _, cfg = running_service
        img = pattern_for_mode(registry, 0, 64, seed=3)
        datagrams = encode_frame(img.pixels, frame_id=9)
        bad = bytearray(datagrams[1])
        bad[11:13] = (99).to_bytes(2, "little")
        replies = _udp_exchange(cfg, [datagrams[0], bytes(bad)])
        assert replies and replies[0].status == STATUS_DECODE_ERROR
        assert replies[0].frame_id == 9

    def test_low_confidence_status_and_zero_frequency(self, tiny_checkpoint,
                                                      registry, service_ports):
        cfg = ServiceConfig(**service_ports, confidence_floor=2.0)
        service = MappingService(cfg, tiny_checkpoint[0], registry)
        service.start()
        try:
            img = pattern_for_mode(registry, 0, 64, seed=4)
            replies = _udp_exchange(cfg, encode_frame(img.pixels, frame_id=2))
            assert replies and replies[0].status == STATUS_LOW_CONFIDENCE
            assert replies[0].frequency_hz == 0.0
        finally:
            service.stop()

    def test_overload_serves_freshest_frame(self, running_service, registry):
        service, cfg = running_service
        img = pattern_for_mode(registry, 0, 48, seed=5)
        rx = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        tx = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        try:
            rx.bind((cfg.host, cfg.reply_port))
            rx.settimeout(5.0)
            last = 39
            for fid in range(last + 1):
                for d in encode_frame(img.pixels, frame_id=fid):
                    tx.sendto(d, (cfg.host, cfg.listen_port))
            got = set()
            while True:
                try:
                    data, _ = rx.recvfrom(65535)
                except socket.timeout:
                    break
                got.add(decode_result(data).frame_id)
                if last in got:
                    break
            assert last in got
            assert service.counters.snapshot().get("evicted_frames", 0) > 0
        finally:
            rx.close()
            tx.close()


class TestBridge:
    def test_ping_pong(self, running_service):
        _, cfg = running_service
        conn = _bridge_connect(cfg)
        try:
            assert _bridge_call(conn, {"type": "ping"})["type"] == "pong"
        finally:
            conn.close()

    def test_frame_result_mirrors_wire_fields(self, running_service, registry):
        _, cfg = running_service
        img = pattern_for_mode(registry, 2, 64, seed=6)
        conn = _bridge_connect(cfg)
        try:
            reply = _bridge_call(conn, {
                "type": "frame",
                "frame_id": 31,
                "width": img.width,
                "height": img.height,
                "pixels_b64": base64.b64encode(img.pixels.tobytes()).decode(),
            })
        finally:
            conn.close()
        assert reply["type"] == "result"
        assert reply["frame_id"] == 31
        assert set(reply) == {
            "type", "frame_id", "status", "mode_id", "n", "m", "frequency_hz",
            "confidence", "nodal_lines", "inference_ms",
        }
        entry = registry[reply["mode_id"]]
        assert reply["frequency_hz"] == entry.frequency_hz
        assert (reply["n"], reply["m"]) == (entry.order.n, entry.order.m)

    def test_pattern_request_matches_render_bytes(self, running_service,
                                                  registry):
        _, cfg = running_service
        conn = _bridge_connect(cfg)
        try:
            reply = _bridge_call(conn, {"type": "pattern_request", "mode_id": 0,
                                        "seed": 123, "size": 64})
        finally:
            conn.close()
        assert reply["type"] == "pattern"
        assert reply["frequency_hz"] == registry[0].frequency_hz
        png = base64.b64decode(reply["png_b64"])
        decoded = np.asarray(Image.open(io.BytesIO(png)).convert("RGB"))
        expected = pattern_for_mode(registry, 0, 64, seed=123)
        np.testing.assert_array_equal(decoded, expected.pixels)

    def test_malformed_json_keeps_connection_open(self, running_service):
        _, cfg = running_service
        conn = _bridge_connect(cfg)
        try:
            conn.sendall(b"this is not json\n")
            buf = b""
            while b"\n" not in buf:
                buf += conn.recv(65536)
            error = json.loads(buf.split(b"\n", 1)[0])
            assert error["type"] == "error"
            assert error["code"] and error["message"]
            assert _bridge_call(conn, {"type": "ping"})["type"] == "pong"
        finally:
            conn.close()

    def test_unknown_type_is_an_error(self, running_service):
        _, cfg = running_service
        conn = _bridge_connect(cfg)
        try:
            reply = _bridge_call(conn, {"type": "dance"})
        finally:
            conn.close()
        assert reply["type"] == "error"

    def test_unknown_mode_is_an_error(self, running_service):
        _, cfg = running_service
        conn = _bridge_connect(cfg)
        try:
            reply = _bridge_call(conn, {"type": "pattern_request", "mode_id": 99,
                                        "seed": 0, "size": 64})
        finally:
            conn.close()
        assert reply["type"] == "error"


class TestFullLink:
    def test_smoke_run_collects_statistics(self, tiny_checkpoint, registry,
                                           service_ports):
        cfg = ServiceConfig(**service_ports, confidence_floor=0.0)
        out = full_link_latency(cfg, tiny_checkpoint[0], registry, frames=5)
        assert out["dropped"] == 0
        assert out["measured"] == 5
        assert 0 < out["mean_ms"] <= out["max_ms"]

    def test_single_frame(self, tiny_checkpoint, registry, service_ports):
        cfg = ServiceConfig(**service_ports, confidence_floor=0.0)
        out = full_link_latency(cfg, tiny_checkpoint[0], registry, frames=1)
        assert out["measured"] == 1
        assert out["mean_ms"] == out["max_ms"]
