"""Amplitude-based end-of-utterance detection.

Works on precomputed per-frame RMS values so the contract stays codec-free:
a frame is (rms in [0,1], duration_ms). An endpoint fires at the exact
instant accumulated contiguous sub-threshold time reaches the timeout,
provided speech (a frame at or above threshold) occurred since the last
endpoint or stream start.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

DEFAULT_THRESHOLD = 0.01
DEFAULT_TIMEOUT_MS = 2000


class InvalidFrame(ValueError):
    pass


@dataclass(frozen=True)
class Frame:
    rms: float
    duration_ms: int


class EndpointDetector:
    """Incremental accumulator form of detect_endpoints; single-owner."""

    def __init__(self, threshold: float = DEFAULT_THRESHOLD, timeout_ms: int = DEFAULT_TIMEOUT_MS):
        if timeout_ms <= 0:
            raise ValueError("timeout_ms must be positive")
        self.threshold = threshold
        self.timeout_ms = timeout_ms
        self._elapsed_ms = 0
        self._silence_ms = 0
        self._armed = False  # speech seen since stream start / last endpoint

    def feed(self, frame: Frame) -> list[int]:
        if frame.duration_ms < 0:
            raise InvalidFrame(f"negative duration: {frame.duration_ms}")
        if not 0.0 <= frame.rms <= 1.0:
            raise InvalidFrame(f"rms outside [0,1]: {frame.rms}")
        endpoints: list[int] = []
        if frame.rms >= self.threshold:
            # >= counts as speech; the accumulator resets.
            self._silence_ms = 0
            self._armed = True
        elif self._armed:
            if self._silence_ms + frame.duration_ms >= self.timeout_ms:
                endpoints.append(self._elapsed_ms + (self.timeout_ms - self._silence_ms))
                self._armed = False
                self._silence_ms = 0
            else:
                self._silence_ms += frame.duration_ms
        self._elapsed_ms += frame.duration_ms
        return endpoints


def detect_endpoints(
    frames: Sequence[Frame] | Iterable[Frame],
    threshold: float = DEFAULT_THRESHOLD,
    timeout_ms: int = DEFAULT_TIMEOUT_MS,
) -> list[int]:
    """Return endpoint offsets (ms from stream start) for a frame sequence."""
    detector = EndpointDetector(threshold=threshold, timeout_ms=timeout_ms)
    endpoints: list[int] = []
    for frame in frames:
        endpoints.extend(detector.feed(frame))
    return endpoints


def load_trace(path: str | Path) -> list[Frame]:
    """Read a test trace: CSV lines "duration_ms,rms"."""
    frames: list[Frame] = []
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            if not row or row[0].lstrip().startswith("#"):
                continue
            frames.append(Frame(rms=float(row[1]), duration_ms=int(row[0])))
    return frames
