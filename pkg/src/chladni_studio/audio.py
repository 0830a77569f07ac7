"""Sine rendering of benchmark frequencies.

Batch rendering to 16-bit mono WAV for offline sonification, and a
phase-continuous streaming oscillator whose frequency retargets glide
linearly over a short window so live transitions never click.
"""

from __future__ import annotations

import math
import struct
import wave
from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = ["ToneSpec", "ToneStream", "render_tone", "write_wav", "stream_next"]

DEFAULT_SAMPLE_RATE = 48000
DEFAULT_GLIDE_MS = 30.0
TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class ToneSpec:
    frequency_hz: float
    duration_s: float
    amplitude: float = 0.8
    sample_rate: int = DEFAULT_SAMPLE_RATE
    fade_ms: float = 10.0

    def __post_init__(self):
        if self.frequency_hz <= 0:
            raise ValueError("frequency must be positive")
        if self.frequency_hz >= self.sample_rate / 2:
            raise ValueError(
                f"frequency {self.frequency_hz} Hz violates Nyquist at "
                f"{self.sample_rate} Hz"
            )
        if not 0.0 < self.amplitude <= 1.0:
            raise ValueError("amplitude must lie in (0, 1]")
        if self.duration_s <= 0:
            raise ValueError("duration must be positive")
        if self.fade_ms < 0:
            raise ValueError("fade must be non-negative")


def render_tone(spec: ToneSpec) -> np.ndarray:
    """s[k] = A * env(k) * sin(2 pi f k / sr) with a linear fade envelope."""
    n = round(spec.duration_s * spec.sample_rate)
    k = np.arange(n, dtype=np.float64)
    samples = spec.amplitude * np.sin(TWO_PI * spec.frequency_hz * k / spec.sample_rate)
    fade = min(round(spec.fade_ms / 1000.0 * spec.sample_rate), n // 2)
    if fade > 0:
        ramp = np.arange(1, fade + 1, dtype=np.float64) / fade
        samples[:fade] *= ramp
        samples[-fade:] *= ramp[::-1]
    return samples


def write_wav(samples: np.ndarray, sample_rate: int, path: str | Path) -> None:
    """Write mono 16-bit PCM; samples scaled by 32767 and rounded
    half-away-from-zero."""
    samples = np.asarray(samples, dtype=np.float64)
    scaled = np.sign(samples) * np.floor(np.abs(samples) * 32767.0 + 0.5)
    pcm = np.clip(scaled, -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as wav:
        wav.setnchannels(1)
        wav.setsampwidth(2)
        wav.setframerate(sample_rate)
        wav.writeframes(pcm.tobytes())


def read_wav(path: str | Path) -> tuple[np.ndarray, int]:
    """Read back a mono 16-bit WAV as floats in [-1, 1]."""
    with wave.open(str(path), "rb") as wav:
        if wav.getnchannels() != 1 or wav.getsampwidth() != 2:
            raise ValueError("expected mono 16-bit PCM")
        rate = wav.getframerate()
        raw = wav.readframes(wav.getnframes())
    pcm = np.frombuffer(raw, dtype="<i2").astype(np.float64)
    return pcm / 32767.0, rate


class ToneStream:
    """Phase-continuous oscillator with linear frequency glide.

    Retargeting never jumps phase: the instantaneous frequency ramps from
    its current value to the target over glide_ms, then holds.
    """

    def __init__(self, frequency_hz: float, amplitude: float = 0.8,
                 sample_rate: int = DEFAULT_SAMPLE_RATE,
                 glide_ms: float = DEFAULT_GLIDE_MS):
        self._check_frequency(frequency_hz, sample_rate)
        self.sample_rate = sample_rate
        self.amplitude = amplitude
        self.glide_ms = glide_ms
        self.phase = 0.0  # radians in [0, 2 pi)
        self.frequency = float(frequency_hz)
        self.target_frequency = float(frequency_hz)
        self._step = 0.0  # Hz per sample while gliding
        self._glide_left = 0

    @staticmethod
    def _check_frequency(frequency_hz: float, sample_rate: int) -> None:
        if frequency_hz <= 0 or frequency_hz >= sample_rate / 2:
            raise ValueError("frequency must lie in (0, sample_rate/2)")

    def retarget(self, frequency_hz: float) -> None:
        self._check_frequency(frequency_hz, self.sample_rate)
        self.target_frequency = float(frequency_hz)
        glide = round(self.glide_ms / 1000.0 * self.sample_rate)
        if glide <= 0 or frequency_hz == self.frequency:
            self.frequency = float(frequency_hz)
            self._glide_left = 0
            self._step = 0.0
            return
        self._glide_left = glide
        self._step = (frequency_hz - self.frequency) / glide

    def next_block(self, n: int) -> np.ndarray:
        """Generate the next n samples, advancing phase and any glide."""
        if n <= 0:
            return np.zeros(0)
        freqs = np.full(n, self.target_frequency, dtype=np.float64)
        if self._glide_left > 0:
            g = min(n, self._glide_left)
            freqs[:g] = self.frequency + self._step * np.arange(1, g + 1)
            self._glide_left -= g
        increments = TWO_PI * freqs / self.sample_rate
        cumulative = np.cumsum(increments)
        samples = self.amplitude * np.sin(self.phase + cumulative - increments)
        self.phase = (self.phase + cumulative[-1]) % TWO_PI
        self.frequency = float(freqs[-1])
        return samples

    def fill(self, buffer: np.ndarray) -> int:
        """Fill a caller-provided buffer; returns the count filled."""
        block = self.next_block(len(buffer))
        buffer[:len(block)] = block
        return len(block)


def stream_next(state: ToneStream, n: int) -> np.ndarray:
    """Functional alias for ToneStream.next_block."""
    return state.next_block(n)
