"""QuadCS front end: chipping, bandpass filtering, bandpass sampling and
digital I/Q extraction, plus the equivalent measurement matrix.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass
from fractions import Fraction
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy import integrate

from .waveform import Dictionary, RadarParams


@dataclass(frozen=True)
class QuadCSConfig:
    """Front-end settings.

    ``l_index=None`` picks the largest admissible bandpass-sampling index
    (lowest sampling rate). ``chip_rate=None`` means ``B``.
    """

    cs_bandwidth: float
    chip_seed: int = 0
    l_index: int | None = None
    chip_rate: float | None = None
    filter_kind: str = "ideal"

    def __post_init__(self):
        if not self.cs_bandwidth > 0:
            raise ValueError("cs_bandwidth must be positive")
        if self.filter_kind != "ideal":
            raise ValueError(f"unsupported filter_kind {self.filter_kind!r}")

    def resolved(self, params: RadarParams) -> "QuadCSConfig":
        """Copy with ``l_index`` and ``chip_rate`` filled in and validated."""
        if self.cs_bandwidth >= params.bandwidth:
            raise ValueError("cs_bandwidth must be below the signal bandwidth")
        l_max = max_l_index(params.if_freq, self.cs_bandwidth)
        l = l_max if self.l_index is None else self.l_index
        bandpass_sample_rate(params.if_freq, self.cs_bandwidth, l)
        rate = params.bandwidth if self.chip_rate is None else self.chip_rate
        return QuadCSConfig(self.cs_bandwidth, self.chip_seed, l, rate, self.filter_kind)

    def sample_rate(self, params: RadarParams) -> float:
        c = self.resolved(params)
        return bandpass_sample_rate(params.if_freq, c.cs_bandwidth, c.l_index)

    def t_cs(self, params: RadarParams) -> float:
        """Spacing of the complex I/Q output samples."""
        return 2.0 / self.sample_rate(params)

    def num_samples(self, params: RadarParams) -> int:
        """``M``, complex samples per PRI."""
        return int(math.floor(params.pri / self.t_cs(params) + 1e-9))

    def digest(self, params: RadarParams) -> str:
        blob = json.dumps([asdict(self.resolved(params)), asdict(params)], sort_keys=True)
        return hashlib.sha1(blob.encode()).hexdigest()[:12]


def max_l_index(f0: float, cs_bandwidth: float) -> int:
    f_low = f0 - cs_bandwidth / 2
    return int(math.floor(f_low / (2 * cs_bandwidth) + 1e-9))


def bandpass_sample_rate(f0: float, cs_bandwidth: float, l: int) -> float:
    """Bandpass sampling rate ``(4 f_L + 2 B_cs) / (4 l + 1)``, ``f_L = f0 - B_cs/2``."""
    l_max = max_l_index(f0, cs_bandwidth)
    if not 1 <= l <= l_max:
        raise ValueError(f"l index {l} outside 1..{l_max}")
    f_low = f0 - cs_bandwidth / 2
    return (4 * f_low + 2 * cs_bandwidth) / (4 * l + 1)


def gen_chipping(config: QuadCSConfig, params: RadarParams, duration: float | None = None) -> np.ndarray:
    """Random +-1 chips of width ``1/chip_rate`` on the analog grid."""
    c = config.resolved(params)
    spc = params.grid_rate / c.chip_rate
    if abs(spc - round(spc)) > 1e-9:
        raise ValueError("grid rate must be an integer multiple of the chip rate")
    spc = int(round(spc))
    n = params.grid_len if duration is None else int(round(duration * params.grid_rate))
    rng = np.random.default_rng(c.chip_seed)
    chips = rng.integers(0, 2, size=-(-n // spc)) * 2.0 - 1.0
    return np.repeat(chips, spc)[:n]


def chipping_loss(params: RadarParams, chip_rate: float) -> float:
    """Fraction of in-band spectral density left at ``f0`` after chipping.

    Random chips of rate ``R`` have PSD ``sinc^2(f/R)/R``; convolving it with
    a flat band of width ``B`` leaves ``int_{-B/2}^{B/2} sinc^2(f/R)/R df`` at
    the band centre.
    """
    half = params.bandwidth / (2 * chip_rate)
    val, _ = integrate.quad(lambda u: np.sinc(u) ** 2, -half, half)
    return val


class _Chain:
    """Precomputed discrete QuadCS chain for one (params, config) pair.

    The analog grid is zero-padded to a period ``P`` chosen so the
    bandpass-sampled sequence is exactly periodic with a length divisible
    by four; the ideal filters then act without circular error.
    """

    def __init__(self, params: RadarParams, config: QuadCSConfig):
        c = config.resolved(params)
        self.params, self.config = params, c
        fs, n = params.grid_rate, params.grid_len
        self.f_if = bandpass_sample_rate(params.if_freq, c.cs_bandwidth, c.l_index)
        if fs < 2 * (params.if_freq + c.cs_bandwidth / 2):
            raise ValueError("analog grid too coarse for the QuadCS band")
        ratio = Fraction(self.f_if / fs).limit_denominator(1_000_000)
        p, q = ratio.numerator, ratio.denominator
        unit = q * 4 // math.gcd(4, p)
        P = -(-2 * n // unit) * unit
        if abs(p / q - self.f_if / fs) < 1e-12 and P <= 16 * n:
            self.periodic = True
        else:
            # sampled sequence only approximately periodic; edge error remains
            P = 2 * n
            self.periodic = False
        self.P = P
        K = int(round(P / fs * self.f_if))
        self.K = K - K % 4
        self.M = c.num_samples(params)
        self.chips = gen_chipping(c, params)
        freqs = np.arange(P // 2 + 1) * fs / P
        self.band = np.flatnonzero(np.abs(freqs - params.if_freq) < c.cs_bandwidth / 2)
        k = np.arange(self.K)
        t_k = k / self.f_if
        self.synth = np.exp(2j * np.pi * np.outer(freqs[self.band], t_k)) / P
        self.rotate = np.exp(-0.5j * np.pi * k)
        nu = np.fft.fftfreq(self.K)
        self.halfband = np.abs(nu) < 0.25
        self.gain = 1.0 / math.sqrt(chipping_loss(params, c.chip_rate))

    def analytic(self, r: np.ndarray) -> np.ndarray:
        n = r.shape[-1]
        R = np.fft.fft(r, axis=-1)
        h = np.zeros(n)
        h[0] = 1
        h[1:(n + 1) // 2] = 2
        if n % 2 == 0:
            h[n // 2] = 1
        return np.fft.ifft(R * h, axis=-1)

    def __call__(self, r: np.ndarray) -> np.ndarray:
        r = np.atleast_2d(np.asarray(r, dtype=float))
        if r.shape[-1] != self.params.grid_len:
            raise ValueError("input is not on the PRI analog grid")
        # chipping acts on the analytic signal: the mixer image at -f0 is dropped
        return self.from_analytic(self.analytic(r))

    def positive(self, z: np.ndarray) -> np.ndarray:
        """Positive-frequency part of a complex grid signal.

        Same bin weights as :meth:`analytic`, so ``analytic(Re z)`` is
        ``positive(z) + positive(conj(z))`` exactly.
        """
        return 0.5 * self.analytic(z)

    def from_analytic(self, z: np.ndarray) -> np.ndarray:
        """Chain output for a complex analytic input (linear in complex gain)."""
        z = np.atleast_2d(z)
        if z.shape[-1] != self.params.grid_len:
            raise ValueError("input is not on the PRI analog grid")
        x = z * self.chips
        X = np.fft.fft(x, n=self.P, axis=-1)[:, self.band]
        y = np.real(X @ self.synth)
        z = 2 * y * self.rotate
        z = np.fft.ifft(np.fft.fft(z, axis=-1) * self.halfband, axis=-1)
        return self.gain * z[:, : 2 * self.M : 2]


@lru_cache(maxsize=16)
def _chain(params: RadarParams, config: QuadCSConfig) -> _Chain:
    return _Chain(params, config)


def front_end(r: np.ndarray, config: QuadCSConfig, params: RadarParams) -> np.ndarray:
    """Compressive complex samples ``s_cs[m]``, ``m = 0..M-1``.

    ``r`` is one real IF pulse on the analog grid or a ``(J, grid_len)``
    batch; the output has shape ``(M,)`` or ``(J, M)`` accordingly.
    The output is scaled by the inverse chipping loss so that white input
    of PSD ``N0/2`` yields complex samples of variance ``2 N0 B_cs``.
    """
    single = np.ndim(r) == 1
    out = _chain(params, config.resolved(params))(r)
    return out[0] if single else out


@dataclass(frozen=True, eq=False)
class MeasurementMatrix:
    """``M x N`` map from dictionary coefficients to compressive samples."""

    entries: np.ndarray
    config: QuadCSConfig
    params: RadarParams
    t_min: float

    @property
    def M(self) -> int:
        return self.entries.shape[0]

    @property
    def N(self) -> int:
        return self.entries.shape[1]

    @property
    def column_energy(self) -> np.ndarray:
        return np.sum(np.abs(self.entries) ** 2, axis=0)

    @property
    def nominal_column_energy(self) -> float:
        """``2 T_b B_cs^2 / B`` for a flat-spectrum pulse of unit power."""
        p = self.params
        return 2 * p.pulse_width * self.config.cs_bandwidth**2 / p.bandwidth

    def matched_filter(self) -> np.ndarray:
        """Columns rescaled to the nominal energy, used for detection."""
        norms = np.sqrt(self.column_energy)
        return self.entries * (math.sqrt(self.nominal_column_energy) / norms)

    def digest(self) -> str:
        return self.config.digest(self.params)

    def save(self, path) -> None:
        header = {
            "M": self.M, "N": self.N, "seed": self.config.chip_seed,
            "config_hash": self.digest(), "t_min": self.t_min,
            "config": asdict(self.config), "params": asdict(self.params),
        }
        np.savez(path, entries=self.entries, header=json.dumps(header, sort_keys=True))

    @classmethod
    def load(cls, path) -> "MeasurementMatrix":
        with np.load(Path(path), allow_pickle=False) as f:
            entries = f["entries"]
            header = json.loads(str(f["header"]))
        params = RadarParams(**header["params"])
        config = QuadCSConfig(**header["config"])
        if config.digest(params) != header["config_hash"]:
            raise ValueError("matrix file header hash mismatch")
        if entries.shape != (header["M"], header["N"]):
            raise ValueError("matrix file shape does not match header")
        return cls(entries, config, params, header["t_min"])


def build_measurement_matrix(config: QuadCSConfig, dictionary: Dictionary, chunk: int = 64) -> MeasurementMatrix:
    """Push every dictionary atom through the front end (one column each).

    Atoms enter as the positive-frequency part of ``psi_n exp(j 2 pi f0 t)``,
    so a column is the complex-linear part of the real chain. The chain also
    passes a conjugate term from the gated chirp's spectral tail below
    ``-f0`` (about 0.6% of a column at desk scale), which no complex-linear
    model can carry.
    """
    params = dictionary.params
    config = config.resolved(params)
    chain = _chain(params, config)
    carrier = np.exp(2j * np.pi * params.if_freq * params.time_grid())
    cols = []
    for start in range(0, dictionary.N, chunk):
        block = np.stack([dictionary.atom(n) for n in range(start, min(dictionary.N, start + chunk))])
        cols.append(chain.from_analytic(chain.positive(block * carrier)))
    entries = np.concatenate(cols, axis=0).T.copy()
    entries.setflags(write=False)
    return MeasurementMatrix(entries, config, params, dictionary.t_min)


def sample_matrix_domain(rho: np.ndarray, matrix: MeasurementMatrix | np.ndarray, noise_var: float,
                         rng: np.random.Generator | None = None) -> np.ndarray:
    """``M rho + n`` with i.i.d. circular complex noise of variance ``noise_var``.

    ``rho`` may be a length-``N`` vector or an ``N x L`` matrix of columns.
    """
    A = matrix.entries if isinstance(matrix, MeasurementMatrix) else np.asarray(matrix)
    rho = np.asarray(rho)
    if rho.shape[0] != A.shape[1]:
        raise ValueError(f"rho has {rho.shape[0]} rows, matrix has {A.shape[1]} columns")
    out = A @ rho
    if noise_var > 0:
        if rng is None:
            raise ValueError("rng required when noise_var > 0")
        s = math.sqrt(noise_var / 2)
        out = out + s * (rng.standard_normal(out.shape) + 1j * rng.standard_normal(out.shape))
    return out


def gram_metrics(matrix: MeasurementMatrix | np.ndarray) -> tuple[float, float]:
    """(max off-diagonal coherence, max/min column-energy ratio)."""
    A = matrix.entries if isinstance(matrix, MeasurementMatrix) else np.asarray(matrix)
    energy = np.sum(np.abs(A) ** 2, axis=0)
    if np.any(energy == 0):
        raise ValueError("matrix has a zero column")
    An = A / np.sqrt(energy)
    G = np.abs(An.conj().T @ An)
    np.fill_diagonal(G, 0)
    return float(G.max()) if G.size > 1 else 0.0, float(energy.max() / energy.min())


def normalized_gram(matrix: MeasurementMatrix) -> np.ndarray:
    A = matrix.entries
    An = A / np.sqrt(np.sum(np.abs(A) ** 2, axis=0))
    return An.conj().T @ An
