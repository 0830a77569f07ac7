"""Checkpoint container: bit-exact round trips and corruption handling."""

import struct

import numpy as np
import pytest

from chladni_studio.checkpoint import (
    Checkpoint,
    load_checkpoint,
    save_checkpoint,
)
from chladni_studio.model import ModelConfig, build_model


@pytest.fixture(scope="module")
def small_ckpt(tmp_path_factory):
    config = ModelConfig(variant="cbam5", image_size=32,
                         channel_widths=(4, 4, 8, 16), cbam_reduction=4,
                         num_classes=5)
    model = build_model(config, seed=7)
    ckpt = Checkpoint(
        config=config,
        params={k: t.data.copy() for k, t in model.params.items()},
        history=[{"epoch": 1, "train_loss": 1.0, "val_loss": 0.9,
                  "val_accuracy": 0.5}],
    )
    path = tmp_path_factory.mktemp("ckpt") / "small.ckpt"
    save_checkpoint(ckpt, path)
    return ckpt, path


def _tensor_payload_offset(raw: bytes, wanted: str) -> int:
    """Byte offset of the first payload byte of the named tensor."""
    pos = 4 + 1
    (blob_len,) = struct.unpack_from("<I", raw, pos)
    pos += 4 + blob_len
    while pos < len(raw) - 4:
        (name_len,) = struct.unpack_from("<H", raw, pos)
        pos += 2
        name = raw[pos:pos + name_len].decode()
        pos += name_len
        _, rank = struct.unpack_from("<BB", raw, pos)
        pos += 2
        dims = struct.unpack_from(f"<{rank}I", raw, pos)
        pos += 4 * rank
        if name == wanted:
            return pos
        pos += 4 * int(np.prod(dims))
    raise AssertionError(f"tensor {wanted} not found")


class TestRoundTrip:
    def test_params_bit_exact(self, small_ckpt):
        ckpt, path = small_ckpt
        loaded = load_checkpoint(path)
        assert loaded.config == ckpt.config
        assert loaded.history == ckpt.history
        assert list(loaded.params) == list(ckpt.params)
        for k in ckpt.params:
            assert loaded.params[k].dtype == np.float32
            np.testing.assert_array_equal(loaded.params[k], ckpt.params[k])

    def test_logits_identical_on_random_inputs(self, small_ckpt):
        ckpt, path = small_ckpt
        loaded = load_checkpoint(path)
        a, b = ckpt.build(), loaded.build()
        rng = np.random.default_rng(0)
        for _ in range(5):
            x = rng.random((1, 3, 32, 32), np.float32)
            np.testing.assert_array_equal(a.logits(x), b.logits(x))

    def test_save_is_deterministic(self, small_ckpt, tmp_path):
        ckpt, path = small_ckpt
        again = tmp_path / "again.ckpt"
        save_checkpoint(ckpt, again)
        assert again.read_bytes() == path.read_bytes()


class TestCorruption:
    def test_bad_magic(self, small_ckpt, tmp_path):
        _, path = small_ckpt
        raw = bytearray(path.read_bytes())
        raw[:4] = b"NOPE"
        bad = tmp_path / "bad_magic.ckpt"
        bad.write_bytes(raw)
        with pytest.raises(ValueError, match="magic"):
            load_checkpoint(bad)

    def test_truncation_names_the_tensor(self, small_ckpt, tmp_path):
        _, path = small_ckpt
        raw = path.read_bytes()
        offset = _tensor_payload_offset(raw, "conv2.w")
        cut = tmp_path / "cut.ckpt"
        cut.write_bytes(raw[:offset + 6])  # a few bytes into the payload
        with pytest.raises(ValueError, match="conv2.w"):
            load_checkpoint(cut)

    def test_flipped_payload_fails_checksum(self, small_ckpt, tmp_path):
        _, path = small_ckpt
        raw = bytearray(path.read_bytes())
        offset = _tensor_payload_offset(bytes(raw), "conv1.w")
        raw[offset] ^= 0xFF
        bad = tmp_path / "flip.ckpt"
        bad.write_bytes(raw)
        with pytest.raises(ValueError, match="checksum"):
            load_checkpoint(bad)

    def test_unsupported_version(self, small_ckpt, tmp_path):
        _, path = small_ckpt
        raw = bytearray(path.read_bytes())
        raw[4] = 9
        bad = tmp_path / "ver.ckpt"
        bad.write_bytes(raw)
        with pytest.raises(ValueError, match="version"):
            load_checkpoint(bad)
