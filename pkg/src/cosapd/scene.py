"""Echo synthesis: point targets, bandlimited receiver noise and ground clutter."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .waveform import Dictionary, RadarParams


@dataclass(frozen=True)
class Target:
    """Non-fluctuating point scatterer (stop-and-hop within a CPI)."""

    delay: float
    doppler: float
    reflectivity: float
    init_phase: float = 0.0

    def __post_init__(self):
        if self.reflectivity < 0:
            raise ValueError("reflectivity must be nonnegative")

    def pulse_amplitude(self, l: int, pri: float) -> complex:
        """Complex amplitude seen on pulse ``l`` (1-based)."""
        phase = 2 * np.pi * self.doppler * (l - 1) * pri + self.init_phase
        return self.reflectivity * np.exp(1j * phase)

    def check_unambiguous(self, params: RadarParams):
        if abs(self.doppler) > 1 / (2 * params.pri):
            raise ValueError(f"doppler {self.doppler} Hz outside +-PRF/2")


@dataclass(frozen=True)
class NoiseParams:
    """Receiver noise with two-sided PSD ``N0/2`` over the IF band ``B``."""

    n0: float
    bandwidth: float

    def __post_init__(self):
        if self.n0 < 0:
            raise ValueError("N0 must be nonnegative")

    @property
    def power(self) -> float:
        return self.n0 * self.bandwidth


@dataclass(frozen=True)
class ClutterParams:
    """Windblown ground clutter, exponential Doppler-velocity spectrum.

    ``beta`` is the exponential shape constant in s/m of the velocity
    spectrum ``S(v) = beta/2 * exp(-beta |v|)``; 4.3 corresponds to a
    roughly 60 mph wind.
    """

    avg_power: float
    beta: float = 4.3

    def __post_init__(self):
        if self.avg_power < 0:
            raise ValueError("clutter power must be nonnegative")
        if not self.beta > 0:
            raise ValueError("beta must be positive")

    def doppler_decay(self, wavelength: float) -> float:
        """Decay constant (s) of the spectrum written in Doppler frequency."""
        return self.beta * wavelength / 2


def _check_pulse_index(l: int, params: RadarParams):
    if not 1 <= l <= params.num_pulses:
        raise ValueError(f"pulse index {l} outside 1..{params.num_pulses}")


def complex_envelope(targets: Sequence[Target], l: int, dictionary: Dictionary) -> np.ndarray:
    """Baseband envelope of pulse ``l``: sum of delayed, phase-rotated pulses."""
    params = dictionary.params
    _check_pulse_index(l, params)
    env = np.zeros(params.grid_len, dtype=complex)
    for tgt in targets:
        k = params.delay_to_samples(tgt.delay)
        env += tgt.pulse_amplitude(l, params.pri) * dictionary.shifted(k)
    return env


def if_echo(targets: Sequence[Target], l: int, dictionary: Dictionary) -> np.ndarray:
    """Real IF echo ``Re{envelope * exp(j 2 pi f0 t)}`` of pulse ``l``."""
    params = dictionary.params
    env = complex_envelope(targets, l, dictionary)
    return np.real(env * np.exp(2j * np.pi * params.if_freq * params.time_grid()))


def gen_noise_if(noise: NoiseParams, params: RadarParams, rng: np.random.Generator,
                 num: int | None = None) -> np.ndarray:
    """Real Gaussian noise, flat PSD ``N0/2`` on ``|f| in [f0 - B/2, f0 + B/2]``.

    White noise at the grid rate is band-limited by an FFT mask (circular,
    so the result is stationary). ``num`` draws a ``(num, grid_len)`` batch.
    """
    n = params.grid_len
    shape = (n,) if num is None else (num, n)
    if noise.n0 == 0:
        return np.zeros(shape)
    fs = params.grid_rate
    white = rng.standard_normal(shape) * math.sqrt(noise.n0 / 2 * fs)
    f = np.fft.rfftfreq(n, 1 / fs)
    mask = np.abs(f - params.if_freq) < noise.bandwidth / 2
    return np.fft.irfft(np.fft.rfft(white, axis=-1) * mask, n=n, axis=-1)


def complex_noise(var: float, shape, rng: np.random.Generator) -> np.ndarray:
    """Circular complex Gaussian samples with ``E|n|^2 = var``."""
    scale = math.sqrt(var / 2)
    return scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


def _laplace_cdf(x, decay):
    x = np.asarray(x, dtype=float)
    tail = 0.5 * np.exp(-decay * np.abs(x))
    return np.where(x < 0, tail, 1 - tail)


def clutter_doppler_weights(clutter: ClutterParams, nfft: int, pri: float, wavelength: float) -> np.ndarray:
    """Fraction of clutter power falling in each of ``nfft`` Doppler cells.

    The spectrum is integrated over each cell and folded over +-PRF/2 so
    narrow spectra are not lost between frequency samples.
    """
    decay = clutter.doppler_decay(wavelength)
    prf = 1.0 / pri
    df = prf / nfft
    centers = np.fft.fftfreq(nfft, pri)
    w = np.zeros(nfft)
    # alias folding; the spectrum is negligible a few PRFs out
    n_alias = int(min(50, max(1, math.ceil(40 / (decay * prf)))))
    for a in range(-n_alias, n_alias + 1):
        lo = centers + a * prf - df / 2
        w += _laplace_cdf(lo + df, decay) - _laplace_cdf(lo, decay)
    return w / w.sum()


def gen_clutter_slowtime(clutter: ClutterParams, num_pulses: int, pri: float, wavelength: float,
                         rng: np.random.Generator, num_cells: int | None = None) -> np.ndarray:
    """Rayleigh-amplitude slow-time clutter for one or ``num_cells`` range cells.

    Complex white Gaussian noise is shaped in the frequency domain on a
    ``4L``-point grid and the first ``L`` samples kept.
    """
    shape = (num_pulses,) if num_cells is None else (num_cells, num_pulses)
    if clutter.avg_power == 0:
        return np.zeros(shape, dtype=complex)
    nfft = 4 * num_pulses
    wshape = (nfft,) if num_cells is None else (num_cells, nfft)
    spec = np.sqrt(clutter_doppler_weights(clutter, nfft, pri, wavelength) * nfft)
    white = complex_noise(clutter.avg_power, wshape, rng)
    shaped = np.fft.ifft(np.fft.fft(white, axis=-1) * spec, axis=-1)
    return shaped[..., :num_pulses]


def snr_in(target: Target, noise: NoiseParams) -> float:
    """Received SNR ``|rho|^2 / (N0 B)`` in dB (unit transmit power)."""
    if noise.power <= 0:
        raise ValueError("noise power N0*B must be positive")
    return 10 * math.log10(target.reflectivity**2 / noise.power)


def scr_in(target: Target, clutter: ClutterParams) -> float:
    """Received SCR ``|rho|^2 / rho_c^2`` in dB."""
    if clutter.avg_power <= 0:
        raise ValueError("clutter power must be positive")
    return 10 * math.log10(target.reflectivity**2 / clutter.avg_power)


def reflectivity_for_snr(snr_db: float, noise: NoiseParams) -> float:
    return math.sqrt(10 ** (snr_db / 10) * noise.power)
