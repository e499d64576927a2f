"""Functional model of the RRAM compute-in-memory processing element."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .fixedpoint import NumericMode, FIXED


class PeError(RuntimeError):
    pass


def quantize_adc(value: float, step: float, bits: int) -> int:
    """Uniform mid-rise quantizer; codes saturate at the signed ``bits`` range.

    Code ``k`` covers ``[k*step, (k+1)*step)`` and reconstructs to the bin
    centre, see :func:`adc_level`.
    """
    lo, hi = -(1 << (bits - 1)), (1 << (bits - 1)) - 1
    code = math.floor(value / step)
    return min(max(code, lo), hi)


def adc_level(code: int, step: float) -> float:
    """Reconstruction level of a mid-rise code (the centre of its bin)."""
    return (code + 0.5) * step


@dataclass
class PeArray:
    """A ``size x size`` weight-stationary crossbar.

    ``weights[i][j]`` is the signed conductance code connecting input row ``i``
    to output column ``j``; ``smac`` computes ``W^T x``.  ``analog_offsets`` is
    the per-column additive error of the analog readout that the calibration
    pass measures and the compensation step removes.
    """

    size: int = 256
    weight_bits: int = 8
    adc_bits: int | None = 8
    offset_limit: float = 0.25        # |offset| bound as a fraction of ADC full scale
    input_rms: float = 1.0            # expected input magnitude used by calibration
    calib_sigma: float = 4.0
    scale: float = 1.0                # real value of one weight code
    mode: NumericMode = FIXED
    analog_offsets: np.ndarray | None = None
    weights: np.ndarray | None = field(default=None, repr=False)
    programmed: bool = False
    program_count: int = 0
    calibration_offsets: list[int] = field(default_factory=list)
    adc_steps: list[float] = field(default_factory=list)
    saturations: int = 0

    def program(self, weights: Sequence[Sequence[int]] | np.ndarray) -> "PeArray":
        if self.programmed:
            raise PeError("array already programmed; reset() before re-programming")
        w = np.asarray(weights, dtype=np.int64)
        if w.ndim != 2 or w.shape[0] > self.size or w.shape[1] > self.size:
            raise PeError(f"weight tile of shape {w.shape} exceeds {self.size}x{self.size}")
        full = np.zeros((self.size, self.size), dtype=np.int64)
        full[:w.shape[0], :w.shape[1]] = w
        lim = 1 << (self.weight_bits - 1)
        if full.min() < -lim or full.max() > lim - 1:
            raise PeError(f"weights exceed {self.weight_bits}-bit signed range")
        self.weights = full
        full.setflags(write=False)
        self.programmed = True
        self.program_count += 1
        self._calibrate()
        return self

    def reset(self) -> None:
        self.weights = None
        self.programmed = False
        self.calibration_offsets = []
        self.adc_steps = []

    def _full_scale(self, col: int) -> float:
        norm = float(np.sqrt((self.weights[:, col].astype(float) ** 2).sum()))
        fs = self.calib_sigma * self.input_rms * max(norm, 1.0)
        if not self.mode.exact:
            fs *= 1 << self.mode.frac_bits
        return fs

    def _calibrate(self) -> None:
        """Pick each column's ADC step and record the zero-input readout."""
        offsets = self.analog_offsets
        if offsets is None:
            offsets = np.zeros(self.size)
        self.adc_steps = []
        self.calibration_offsets = []
        for col in range(self.size):
            if self.adc_bits is None or self.mode.exact:
                step = 1.0
                if abs(offsets[col]) != 0 and not float(offsets[col]).is_integer() and self.mode.exact:
                    raise PeError("exact mode requires integer analog offsets")
                self.adc_steps.append(step)
                self.calibration_offsets.append(int(offsets[col]) if self.mode.exact else offsets[col])
                continue
            fs = self._full_scale(col)
            step = fs / (1 << (self.adc_bits - 1))
            if abs(offsets[col]) > self.offset_limit * fs:
                raise PeError(f"column {col} offset exceeds {self.offset_limit} of full scale")
            self.adc_steps.append(step)
            self.calibration_offsets.append(quantize_adc(float(offsets[col]), step, self.adc_bits))

    def smac(self, x: Sequence[int]) -> list[int]:
        """Return ``W^T x`` after ADC quantization and offset compensation.

        In exact mode the result is the integer matrix-vector product.  In
        fixed mode ``x`` holds Q-format integers and the result is scaled by
        ``self.scale`` back into the same Q format.
        """
        if not self.programmed:
            raise PeError("smac on an unprogrammed array")
        if len(x) > self.size:
            raise PeError(f"input of length {len(x)} exceeds array size {self.size}")
        vec = list(x) + [0] * (self.size - len(x))
        bound = max((abs(v) for v in vec), default=0) * (1 << (self.weight_bits - 1)) * self.size
        if bound < 1 << 62:
            raw = (np.asarray(vec, dtype=np.int64) @ self.weights).tolist()
        else:
            # object arrays keep the product exact beyond 64 bits
            raw = np.asarray(vec, dtype=object).dot(self.weights.astype(object)).tolist()
        offsets = self.analog_offsets
        out = []
        for j in range(self.size):
            off = 0 if offsets is None else offsets[j]
            if self.mode.exact:
                out.append(raw[j] + int(off) - self.calibration_offsets[j])
                continue
            if self.adc_bits is None:
                y = raw[j] + off - self.calibration_offsets[j]
                out.append(int(round(y * self.scale)))
                continue
            step = self.adc_steps[j]
            code = quantize_adc(raw[j] + off, step, self.adc_bits)
            if code in (-(1 << (self.adc_bits - 1)), (1 << (self.adc_bits - 1)) - 1):
                self.saturations += 1
            comp = adc_level(code - self.calibration_offsets[j], step)
            out.append(int(round(comp * self.scale)))
        return out


def random_offsets(size: int, magnitude: float, rng: np.random.Generator) -> np.ndarray:
    return rng.uniform(-magnitude, magnitude, size)


# weight tile files: row-major int8, size*size entries


def write_tile(path: str | Path, tile: np.ndarray) -> None:
    data = np.asarray(tile, dtype=np.int8)
    Path(path).write_bytes(data.tobytes(order="C"))


def read_tile(path: str | Path, size: int = 256) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) != size * size:
        raise PeError(f"tile file {path} has {len(raw)} bytes, expected {size * size}")
    return np.frombuffer(raw, dtype=np.int8).reshape(size, size).astype(np.int64)

