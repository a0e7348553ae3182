"""Transmit waveform and the waveform-matched delay dictionary.

Analog signals live on a uniform grid whose rate is an integer multiple of
the bandwidth ``B``, so one range cell ``tau0 = 1/B`` is an exact number of
grid samples.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

SPEED_OF_LIGHT = 299_792_458.0


@dataclass(frozen=True)
class RadarParams:
    """Waveform and timing constants shared by every stage.

    Attributes:
        carrier_freq: RF carrier in Hz (only used to convert Doppler <-> velocity).
        if_freq: intermediate frequency ``f0`` of the received echoes, Hz.
        bandwidth: LFM sweep bandwidth ``B``, Hz.
        pulse_width: ``T_b``, s.
        pri: pulse repetition interval ``T``, s.
        num_pulses: pulses per CPI ``L``.
        oversample_factor: analog-grid samples per ``1/(2(f0 + B/2))``.
    """

    carrier_freq: float
    if_freq: float
    bandwidth: float
    pulse_width: float
    pri: float
    num_pulses: int
    oversample_factor: int = 4

    def __post_init__(self):
        if not self.bandwidth > 0:
            raise ValueError(f"bandwidth must be positive, got {self.bandwidth}")
        if not 0 < self.pulse_width < self.pri:
            raise ValueError("need 0 < pulse_width < pri")
        if not self.if_freq > self.bandwidth / 2:
            raise ValueError("if_freq must exceed bandwidth/2")
        if self.num_pulses < 1:
            raise ValueError("num_pulses must be >= 1")
        if self.oversample_factor < 1:
            raise ValueError("oversample_factor must be a positive integer")

    @property
    def tau0(self) -> float:
        """Range-cell duration ``1/B``."""
        return 1.0 / self.bandwidth

    @property
    def wavelength(self) -> float:
        return SPEED_OF_LIGHT / self.carrier_freq

    @property
    def range_resolution(self) -> float:
        return SPEED_OF_LIGHT * self.tau0 / 2

    @property
    def doppler_resolution(self) -> float:
        return 1.0 / (self.num_pulses * self.pri)

    @property
    def samples_per_cell(self) -> int:
        """Grid samples per ``tau0``; the grid rate is this times ``B``."""
        min_rate = self.oversample_factor * 2 * (self.if_freq + self.bandwidth / 2)
        return int(math.ceil(min_rate / self.bandwidth - 1e-9))

    @property
    def grid_rate(self) -> float:
        return self.samples_per_cell * self.bandwidth

    @property
    def grid_len(self) -> int:
        """Samples in one PRI on the analog grid."""
        return int(round(self.pri * self.grid_rate))

    @property
    def pulse_len(self) -> int:
        return int(round(self.pulse_width * self.grid_rate))

    def time_grid(self) -> np.ndarray:
        return np.arange(self.grid_len) / self.grid_rate

    def delay_to_samples(self, delay: float) -> int:
        """Grid index of ``delay``; raises if the delay is not a grid point."""
        k = delay * self.grid_rate
        kr = int(round(k))
        if abs(k - kr) > 1e-6:
            raise ValueError(f"delay {delay!r} is not on the analog grid")
        return kr


def lfm_baseband(params: RadarParams, t: np.ndarray | None = None) -> np.ndarray:
    """Unit-magnitude LFM pulse sweeping ``-B/2 -> +B/2`` over ``[0, T_b)``.

    ``t`` defaults to the PRI grid of ``params``. A grid sampled below the IF
    Nyquist rate ``2(f0 + B/2)`` is rejected.
    """
    if t is None:
        t = params.time_grid()
    t = np.asarray(t, dtype=float)
    if t.size > 1:
        rate = 1.0 / np.min(np.diff(t))
        if rate < 2 * (params.if_freq + params.bandwidth / 2) * (1 - 1e-9):
            raise ValueError(f"grid rate {rate:.6g} Hz is below the IF Nyquist rate")
    Tb, B = params.pulse_width, params.bandwidth
    inside = (t >= 0) & (t < Tb)
    tc = t - Tb / 2
    return np.where(inside, np.exp(1j * np.pi * (B / Tb) * tc**2), 0.0)


@dataclass(frozen=True, eq=False)
class Dictionary:
    """Delay-shifted copies of the power-normalised transmit pulse.

    Atom ``n`` is the base pulse delayed by ``t_min + n * tau0``. Atoms carry
    amplitude ``sqrt(2)`` so the real transmit waveform has unit power.
    Atoms are generated lazily; at full scale the dense stack is large.
    """

    params: RadarParams
    t_min: float
    N: int
    pulse: np.ndarray = field(repr=False)

    @property
    def tau0(self) -> float:
        return self.params.tau0

    @property
    def delays(self) -> np.ndarray:
        return self.t_min + np.arange(self.N) * self.tau0

    @property
    def start_sample(self) -> int:
        return self.params.delay_to_samples(self.t_min)

    def shifted(self, delay_samples: int) -> np.ndarray:
        """Pulse delayed by an integer number of grid samples (no wrap)."""
        out = np.zeros(self.params.grid_len, dtype=complex)
        n = self.pulse.size
        if not 0 <= delay_samples < out.size:
            raise ValueError("delay outside the PRI")
        stop = min(out.size, delay_samples + n)
        out[delay_samples:stop] = self.pulse[: stop - delay_samples]
        return out

    def atom(self, n: int) -> np.ndarray:
        if not 0 <= n < self.N:
            raise IndexError(n)
        return self.shifted(self.start_sample + n * self.params.samples_per_cell)

    @cached_property
    def atoms(self) -> np.ndarray:
        """Dense ``(N, grid_len)`` stack; avoid at full scale."""
        return np.stack([self.atom(n) for n in range(self.N)])


def build_dictionary(params: RadarParams, delay_span: tuple[float, float] | None = None) -> Dictionary:
    """Waveform-matched dictionary covering ``delay_span`` at spacing ``1/B``.

    The default span is ``[T_b, T - T_b]``.
    """
    if delay_span is None:
        delay_span = (params.pulse_width, params.pri - params.pulse_width)
    t_min, t_max = map(float, delay_span)
    if t_min < 0:
        raise ValueError("delay span must start at t >= 0")
    if t_max <= t_min:
        raise ValueError("empty delay span")
    if t_max + params.pulse_width > params.pri * (1 + 1e-9):
        raise ValueError("delay span exceeds the unambiguous interval (t_max + T_b > T)")
    params.delay_to_samples(t_min)
    N = int(math.ceil((t_max - t_min) / params.tau0 - 1e-9))
    pulse = np.sqrt(2.0) * lfm_baseband(params)[: params.pulse_len]
    return Dictionary(params=params, t_min=t_min, N=N, pulse=pulse)
