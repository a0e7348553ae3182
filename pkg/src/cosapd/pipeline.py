"""CoSaPD processing chain and the two baselines.

CoSaPD: data matrix -> windowed slow-time DFT -> matched filter per Doppler
bin -> global-sigma threshold -> sparse range recovery on detected bins only.
Classic: Nyquist fast-time matched filter -> slow-time DFT -> threshold.
Direct: sparse recovery of every pulse, then slow-time DFT of the estimates.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np
from scipy.signal import windows

from .quadcs import MeasurementMatrix, _chain
from .recovery import RecoveryConfig, SparseEstimate, bpdn_solve_batch, default_step
from .scene import ClutterParams, NoiseParams, Target, complex_noise, gen_clutter_slowtime, gen_noise_if
from .waveform import Dictionary, RadarParams

RAYLEIGH_MEAN = math.sqrt(math.pi / 2)


# ---------------------------------------------------------------- data types

@dataclass
class CpiDataMatrix:
    """``M x L`` compressive samples, one column per pulse."""

    entries: np.ndarray
    meta: dict = field(default_factory=dict)
    truth: np.ndarray | None = None
    targets: tuple = ()

    @property
    def num_pulses(self) -> int:
        return self.entries.shape[1]


@dataclass
class DopplerMap:
    entries: np.ndarray
    window: np.ndarray


@dataclass(frozen=True)
class DetectorConfig:
    """Threshold ``scale_factor * sigma`` on the matched-filter output.

    ``sigma_mode='known'`` uses ``sigma``; ``'estimated'`` estimates it
    from the CPI. ``discard_bins`` are Doppler bins excluded everywhere.
    """

    scale_factor: float = 5.0
    sigma_mode: str = "estimated"
    sigma: float | None = None
    discard_bins: frozenset = frozenset()

    def __post_init__(self):
        if self.scale_factor < 0:
            raise ValueError("scale_factor must be nonnegative")
        if self.sigma_mode not in ("known", "estimated"):
            raise ValueError(f"unknown sigma_mode {self.sigma_mode!r}")
        if self.sigma_mode == "known" and self.sigma is None:
            raise ValueError("sigma_mode='known' needs sigma")
        object.__setattr__(self, "discard_bins", frozenset(int(b) for b in self.discard_bins))


@dataclass(frozen=True)
class Detection:
    doppler_bin: int
    range_bin: int
    amplitude: complex
    on_grid: bool = True
    from_recovery: bool = True

    @property
    def flags(self) -> str:
        names = [n for n, v in (("on_grid", self.on_grid), ("from_recovery", self.from_recovery)) if v]
        return "|".join(names)


@dataclass
class DetectionReport:
    method: str
    detections: list[Detection]
    threshold_used: float
    sigma_hat: float
    bins_recovered: int
    detected_bins: tuple = ()
    solver_flags: dict = field(default_factory=dict)

    def cells(self) -> set[tuple[int, int]]:
        return {(d.doppler_bin, d.range_bin) for d in self.detections}

    def rows(self, trial: int) -> list[list]:
        return [[trial, self.method, d.doppler_bin, d.range_bin,
                 repr(float(np.real(d.amplitude))), repr(float(np.imag(d.amplitude))), d.flags]
                for d in self.detections]


REPORT_COLUMNS = ["trial", "method", "doppler_bin", "range_bin", "re_amp", "im_amp", "flags"]


def write_reports_csv(path, reports: Iterable[tuple[int, DetectionReport]]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(REPORT_COLUMNS)
        for trial, rep in reports:
            w.writerows(rep.rows(trial))


def read_reports_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


# ---------------------------------------------------------------- windows, bins

def taylor_window(L: int, sll: float = 70.0, nbar: int = 11) -> np.ndarray:
    """Taylor taper scaled to unit average gain."""
    if L == 1:
        return np.ones(1)
    w = windows.taylor(L, nbar=nbar, sll=sll, norm=False)
    return w / w.mean()


def make_window(kind, L: int) -> np.ndarray:
    if kind is None or (isinstance(kind, str) and kind == "rect"):
        return np.ones(L)
    if isinstance(kind, str):
        if kind == "taylor":
            return taylor_window(L)
        raise ValueError(f"unknown window {kind!r}")
    w = np.asarray(kind, dtype=float)
    if w.shape != (L,):
        raise ValueError(f"window length {w.size} != {L}")
    return w


def zero_doppler_bins(count: int, L: int) -> frozenset:
    """``count`` Doppler bins centred on zero Doppler (count odd)."""
    if count <= 0:
        return frozenset()
    half = count // 2
    return frozenset(k % L for k in range(-half, count - half))


def doppler_bin_of(doppler: float, params: RadarParams) -> float:
    """Fractional DFT bin of a Doppler shift, in ``[0, L)``."""
    return (doppler * params.num_pulses * params.pri) % params.num_pulses


# ---------------------------------------------------------------- CPI assembly

def target_response(matrix: MeasurementMatrix, dictionary: Dictionary, delay: float) -> np.ndarray:
    """Compressive samples of a unit target at ``delay`` (any analog grid point)."""
    params = dictionary.params
    cell = (delay - matrix.t_min) / params.tau0
    n = int(round(cell))
    if abs(cell - n) < 1e-9 and 0 <= n < matrix.N:
        return matrix.entries[:, n]
    k = params.delay_to_samples(delay)
    carrier = np.exp(2j * np.pi * params.if_freq * params.time_grid())
    chain = _chain(params, matrix.config)
    return chain.from_analytic(chain.positive(dictionary.shifted(k) * carrier))[0]


def target_amplitudes(targets: Sequence[Target], params: RadarParams) -> np.ndarray:
    """``K x L`` complex amplitude of each target on each pulse."""
    l = np.arange(params.num_pulses)
    out = np.empty((len(targets), params.num_pulses), dtype=complex)
    for i, t in enumerate(targets):
        out[i] = t.reflectivity * np.exp(1j * (2 * np.pi * t.doppler * l * params.pri + t.init_phase))
    return out


def truth_matrix(targets: Sequence[Target], matrix: MeasurementMatrix, params: RadarParams) -> np.ndarray:
    """``N x L`` coefficient matrix for on-grid targets (off-grid ones skipped)."""
    theta = np.zeros((matrix.N, params.num_pulses), dtype=complex)
    amps = target_amplitudes(targets, params)
    for a, t in zip(amps, targets):
        cell = (t.delay - matrix.t_min) / params.tau0
        n = int(round(cell))
        if abs(cell - n) < 1e-9 and 0 <= n < matrix.N:
            theta[n] += a
    return theta


def assemble_cpi(targets: Sequence[Target], matrix: MeasurementMatrix, dictionary: Dictionary,
                 noise: NoiseParams | None = None, clutter: ClutterParams | None = None,
                 rng: np.random.Generator | None = None, path: str = "matrix",
                 clutter_cells=None, clutter_coeffs: np.ndarray | None = None) -> CpiDataMatrix:
    """Compressive data matrix of one CPI.

    ``path='matrix'`` forms ``M theta + n`` with i.i.d. noise of variance
    ``2 N0 B_cs``; ``path='analog'`` runs every pulse (echo plus IF noise)
    through the front end. Clutter is added in the coefficient domain on
    ``clutter_cells`` (default: every range cell); pass ``clutter_coeffs``
    to reuse a realisation.
    """
    params = dictionary.params
    if matrix.params != params or abs(matrix.t_min - dictionary.t_min) > 1e-15 or matrix.N != dictionary.N:
        raise ValueError("matrix and dictionary configurations differ")
    for t in targets:
        t.check_unambiguous(params)
    L, M = params.num_pulses, matrix.M
    n0 = 0.0 if noise is None else noise.n0
    if path == "matrix":
        S = np.zeros((M, L), dtype=complex)
        amps = target_amplitudes(targets, params)
        for a, t in zip(amps, targets):
            S += np.outer(target_response(matrix, dictionary, t.delay), a)
        if n0 > 0:
            S += complex_noise(2 * n0 * matrix.config.cs_bandwidth, (M, L), rng)
    elif path == "analog":
        from .scene import if_echo
        from .quadcs import front_end
        R = np.stack([if_echo(targets, l + 1, dictionary) for l in range(L)])
        if n0 > 0:
            R = R + gen_noise_if(noise, params, rng, num=L)
        S = front_end(R, matrix.config, params).T
    else:
        raise ValueError(f"unknown path {path!r}")
    if clutter_coeffs is None and clutter is not None and clutter.avg_power > 0:
        clutter_coeffs = clutter_field(clutter, matrix.N, params, rng, clutter_cells)
    if clutter_coeffs is not None:
        S = S + matrix.entries @ clutter_coeffs
    return CpiDataMatrix(S, meta={"config_hash": matrix.digest(), "path": path},
                         truth=truth_matrix(targets, matrix, params), targets=tuple(targets))


def clutter_field(clutter: ClutterParams, N: int, params: RadarParams, rng: np.random.Generator,
                  cells=None) -> np.ndarray:
    """``N x L`` clutter coefficients, nonzero on ``cells`` (default all).

    ``clutter.avg_power`` is the received clutter power. Echoes from the
    ``T_b B`` cells overlapping any instant add incoherently, so each cell
    carries ``avg_power / (T_b B)``.
    """
    C = np.zeros((N, params.num_pulses), dtype=complex)
    idx = np.arange(N) if cells is None else np.asarray(sorted(cells), dtype=int)
    per_cell = replace(clutter, avg_power=clutter.avg_power / (params.pulse_width * params.bandwidth))
    C[idx] = gen_clutter_slowtime(per_cell, params.num_pulses, params.pri, params.wavelength, rng,
                                  num_cells=idx.size)
    return C


# ---------------------------------------------------------------- CoSaPD stages

def doppler_dft(data, window=None) -> DopplerMap:
    """Row-wise length-L DFT of the (windowed) data matrix."""
    S = data.entries if isinstance(data, CpiDataMatrix) else np.asarray(data)
    w = make_window(window, S.shape[1])
    return DopplerMap(np.fft.fft(S * w[None, :], axis=1), w)


def _mf_matrix(matrix) -> np.ndarray:
    return matrix.matched_filter() if isinstance(matrix, MeasurementMatrix) else np.asarray(matrix)


def matched_filter_bin(matrix, doppler_column: np.ndarray) -> np.ndarray:
    """Matched filter of one Doppler column with the energy-equalised columns.

    Columns are rescaled to the nominal energy before filtering so every
    range cell sees the same noise level; a cell's SNR is unchanged.
    """
    A = _mf_matrix(matrix)
    col = np.asarray(doppler_column)
    if col.shape[0] != A.shape[0]:
        raise ValueError(f"column length {col.shape[0]} != M = {A.shape[0]}")
    return A.conj().T @ col


def matched_filter(matrix, dmap: DopplerMap) -> np.ndarray:
    """``N x L`` matched-filter output for every Doppler bin."""
    A = _mf_matrix(matrix)
    return A.conj().T @ dmap.entries


def active_bins(L: int, discard=()) -> np.ndarray:
    return np.array([b for b in range(L) if b not in set(discard)], dtype=int)


def estimate_sigma(matrix, dmap: DopplerMap | np.ndarray, bins=None) -> float:
    """Rayleigh ML scale: ``sqrt(2/pi) * mean |x|`` over all cells of ``bins``.

    ``dmap`` may also be a precomputed matched-filter array (N x L).
    """
    if isinstance(dmap, DopplerMap):
        X = matched_filter(matrix, dmap)
    else:
        X = np.asarray(dmap)
    if bins is not None:
        X = X[:, np.asarray(bins, dtype=int)]
    if X.size == 0:
        raise ValueError("no cells to estimate sigma from")
    return float(np.mean(np.abs(X)) / RAYLEIGH_MEAN)


def nominal_sigma(params: RadarParams, cs_bandwidth: float, n0: float, window=None) -> float:
    """Noise scale ``sqrt(2 L N0 T_b B_cs^3 / B)`` of the matched-filter output."""
    L = params.num_pulses
    w = make_window(window, L)
    gain = np.sum(w**2) / L
    return math.sqrt(2 * L * n0 * params.pulse_width * cs_bandwidth**3 / params.bandwidth * gain)


def pfa_per_cell(scale_factor: float) -> float:
    if scale_factor < 0:
        raise ValueError("scale_factor must be nonnegative")
    return math.exp(-scale_factor**2 / 2)


def pfa_joint(scale_factor: float, N: int) -> float:
    """False-alarm probability of the any-cell detector over ``N`` cells."""
    if N < 1:
        raise ValueError("N must be >= 1")
    return -math.expm1(N * math.log1p(-pfa_per_cell(scale_factor))) if scale_factor > 0 else 1.0


def scale_factor_for_pfa(pfa: float, N: int = 1) -> float:
    """Inverse of :func:`pfa_joint`."""
    if not 0 < pfa <= 1:
        raise ValueError("pfa must lie in (0, 1]")
    per_cell = -math.expm1(math.log1p(-pfa) / N) if pfa < 1 else 1.0
    return math.sqrt(-2 * math.log(per_cell))


def detect_bin(x: np.ndarray, scale_factor: float, sigma: float) -> tuple[bool, np.ndarray]:
    """Any-cell detector: cells with ``|x_n| >= scale_factor * sigma``."""
    if sigma <= 0 and scale_factor > 0:
        raise ValueError("sigma must be positive")
    mag = np.abs(np.asarray(x))
    if scale_factor == 0:
        exceed = np.flatnonzero(mag > 0)
    else:
        exceed = np.flatnonzero(mag >= scale_factor * sigma)
    return bool(exceed.size), exceed


@dataclass(frozen=True)
class RangeRecoveryConfig:
    """Solver settings plus the noise-scaled regularisation rule.

    ``lam = kappa * sigma_bin * sqrt(2 ln N)`` on unit-norm columns, where
    ``sigma_bin`` is the Rayleigh scale of the raw Doppler-domain samples.
    """

    solver: RecoveryConfig = RecoveryConfig(debias=True)
    kappa: float = 1.5
    noise_guard: bool = True


def raw_sigma(dmap_entries: np.ndarray, bins=None) -> float:
    """Rayleigh scale of the raw Doppler-domain samples in ``bins``."""
    X = dmap_entries if bins is None else dmap_entries[:, np.asarray(bins, dtype=int)]
    return float(np.mean(np.abs(X)) / RAYLEIGH_MEAN)


_UNIT_CACHE: dict[str, tuple[np.ndarray, np.ndarray, float]] = {}


def _unit_dictionary(matrix: MeasurementMatrix):
    key = matrix.digest()
    if key not in _UNIT_CACHE:
        norms = np.sqrt(matrix.column_energy)
        An = matrix.entries / norms
        if len(_UNIT_CACHE) > 16:
            _UNIT_CACHE.clear()
        _UNIT_CACHE[key] = (An, norms, default_step(An))
    return _UNIT_CACHE[key]


def recover_columns(matrix: MeasurementMatrix, columns: np.ndarray, sigma_bin,
                    cfg: RangeRecoveryConfig) -> list[SparseEstimate]:
    """BPDN on each column against unit-norm dictionary columns.

    ``sigma_bin`` is a scalar or one value per column. Columns whose energy
    does not exceed the expected noise energy ``2 M sigma_bin^2`` are not
    solved and come back empty and flagged ``attempted=False``.
    """
    An, norms, step = _unit_dictionary(matrix)
    N, M = matrix.N, matrix.M
    J = columns.shape[1]
    sig = np.broadcast_to(np.asarray(sigma_bin, dtype=float), (J,))
    lam = cfg.kappa * sig * math.sqrt(2 * math.log(max(N, 2)))
    energy = np.sum(np.abs(columns) ** 2, axis=0)
    if cfg.noise_guard:
        todo = np.flatnonzero(energy > 2 * M * sig**2)
    else:
        todo = np.arange(J)
    out: list[SparseEstimate] = [
        SparseEstimate(np.zeros(N, dtype=complex), np.array([], dtype=int),
                       float(math.sqrt(e)), 0, True, attempted=False, lam=float(lj),
                       flags={"below_noise": True})
        for e, lj in zip(energy, lam)]
    if todo.size:
        ests = bpdn_solve_batch(An, columns[:, todo], cfg.solver, lam[todo], step=step)
        for j, e in zip(todo, ests):
            e.coefficients = e.coefficients / norms
            out[j] = e
    return out


def estimate_ranges(dmap: DopplerMap, matrix: MeasurementMatrix, detected_bins: Sequence[int],
                    cfg: RangeRecoveryConfig, sigma_bin: float) -> dict[int, SparseEstimate]:
    """Sparse range recovery on the raw Doppler columns of ``detected_bins`` only."""
    bins = [int(b) for b in detected_bins]
    if not bins:
        return {}
    ests = recover_columns(matrix, dmap.entries[:, bins], sigma_bin, cfg)
    return dict(zip(bins, ests))


@dataclass
class _Stage:
    dmap: DopplerMap
    sigma: float
    sigma_bin: float
    hits: list
    stat: np.ndarray  # per-bin max |x| / sigma


def _detect_stage(cpi: CpiDataMatrix, matrix: MeasurementMatrix, det: DetectorConfig, window) -> _Stage:
    L = cpi.num_pulses
    dmap = doppler_dft(cpi, window)
    X = matched_filter(matrix, dmap)
    bins = active_bins(L, det.discard_bins)
    sigma = det.sigma if det.sigma_mode == "known" else estimate_sigma(matrix, X, bins)
    stat = np.full(L, -np.inf)
    if sigma > 0:
        stat[bins] = np.max(np.abs(X[:, bins]), axis=0) / sigma
    hits = [int(b) for b in bins if sigma > 0 and detect_bin(X[:, b], det.scale_factor, sigma)[0]]
    return _Stage(dmap, sigma, raw_sigma(dmap.entries, bins), hits, stat)


def cosapd_run_batch(cpis: Sequence[CpiDataMatrix], matrix: MeasurementMatrix, det: DetectorConfig,
                     rec: RangeRecoveryConfig = RangeRecoveryConfig(), window=None,
                     on_grid: bool = True) -> list[DetectionReport]:
    """:func:`cosapd_run` over several CPIs with one batched solver call.

    Every column converges on its own, so results match the one-by-one runs.
    """
    stages = [_detect_stage(c, matrix, det, window) for c in cpis]
    cols, sigs, owners = [], [], []
    for i, st in enumerate(stages):
        for b in st.hits:
            cols.append(st.dmap.entries[:, b])
            sigs.append(st.sigma_bin)
            owners.append((i, b))
    ests = recover_columns(matrix, np.stack(cols, axis=1), np.array(sigs), rec) if cols else []
    per_cpi: list[dict] = [dict() for _ in cpis]
    for (i, b), e in zip(owners, ests):
        per_cpi[i][b] = e
    reports = []
    for cpi, st, found in zip(cpis, stages, per_cpi):
        L = cpi.num_pulses
        detections = []
        for b in st.hits:
            e = found[b]
            for n in e.support:
                detections.append(Detection(b, int(n), complex(e.coefficients[n]) / L, on_grid, True))
        reports.append(DetectionReport(
            "cosapd", detections, det.scale_factor * st.sigma, st.sigma,
            sum(e.attempted for e in found.values()), tuple(st.hits),
            {"nonconverged": sum(not e.converged for e in found.values())}))
    return reports


def cosapd_run(cpi: CpiDataMatrix, matrix: MeasurementMatrix, det: DetectorConfig,
               rec: RangeRecoveryConfig = RangeRecoveryConfig(), window=None,
               on_grid: bool = True) -> DetectionReport:
    """Doppler DFT, matched filter, threshold, then range recovery.

    Ranges are only ever estimated in bins the detector flagged.
    """
    return cosapd_run_batch([cpi], matrix, det, rec, window, on_grid)[0]


def detector_statistics(cpi: CpiDataMatrix, matrix: MeasurementMatrix, det: DetectorConfig,
                        window=None) -> tuple[np.ndarray, float]:
    """Per-bin ``max_n |x_n| / sigma`` (``-inf`` on discarded bins) and sigma.

    A bin is detected at scale factor ``lam0`` exactly when its statistic is
    ``>= lam0``, so one pass serves a whole threshold sweep.
    """
    st = _detect_stage(cpi, matrix, det, window)
    return st.stat, st.sigma


# ---------------------------------------------------------------- baselines

def nyquist_cpi(targets: Sequence[Target], dictionary: Dictionary, noise: NoiseParams | None = None,
                rng: np.random.Generator | None = None, clutter_coeffs: np.ndarray | None = None) -> np.ndarray:
    """Ideal quadrature samples at rate ``B`` over one PRI, ``(T B) x L``.

    Noise is i.i.d. with variance ``2 N0 B``; clutter coefficients are laid
    on the dictionary cells.
    """
    params = dictionary.params
    L = params.num_pulses
    spc = params.samples_per_cell
    n_fast = params.grid_len // spc
    X = np.zeros((n_fast, L), dtype=complex)
    amps = target_amplitudes(targets, params)
    for a, t in zip(amps, targets):
        t.check_unambiguous(params)
        env = dictionary.shifted(params.delay_to_samples(t.delay))[::spc][:n_fast]
        X += np.outer(env, a)
    if clutter_coeffs is not None:
        pulse = dictionary.pulse[::spc]
        start = dictionary.start_sample // spc
        C = np.zeros((n_fast, L), dtype=complex)
        C[start:start + dictionary.N] = clutter_coeffs
        F = np.fft.fft(C, n=2 * n_fast, axis=0) * np.fft.fft(pulse, n=2 * n_fast)[:, None]
        X += np.fft.ifft(F, axis=0)[:n_fast]
    if noise is not None and noise.n0 > 0:
        X += complex_noise(2 * noise.n0 * params.bandwidth, X.shape, rng)
    return X


def classic_matched_filter(data: np.ndarray, dictionary: Dictionary) -> np.ndarray:
    """Fast-time correlation with the transmit pulse, one row per dictionary cell."""
    params = dictionary.params
    spc = params.samples_per_cell
    pulse = dictionary.pulse[::spc]
    n_fast = data.shape[0]
    nfft = n_fast + pulse.size
    F = np.fft.fft(data, n=nfft, axis=0) * np.conj(np.fft.fft(pulse, n=nfft))[:, None]
    corr = np.fft.ifft(F, axis=0)
    start = dictionary.start_sample // spc
    return corr[start:start + dictionary.N]


def _local_peaks(mag: np.ndarray) -> np.ndarray:
    """Boolean mask of range-wise local maxima (column by column)."""
    left = np.vstack([np.full((1, mag.shape[1]), -np.inf), mag[:-1]])
    right = np.vstack([mag[1:], np.full((1, mag.shape[1]), -np.inf)])
    return (mag >= left) & (mag > right)


def classic_run(nyq: np.ndarray, dictionary: Dictionary, det: DetectorConfig, window=None,
                on_grid: bool = True) -> DetectionReport:
    """Matched filter, slow-time DFT, threshold and range-peak picking."""
    L = nyq.shape[1]
    mf = classic_matched_filter(nyq, dictionary)
    Y = doppler_dft(mf, window).entries
    bins = active_bins(L, det.discard_bins)
    sigma = det.sigma if det.sigma_mode == "known" else float(np.mean(np.abs(Y[:, bins])) / RAYLEIGH_MEAN)
    threshold = det.scale_factor * sigma
    mag = np.abs(Y)
    hit = (mag >= threshold) & _local_peaks(mag)
    detections = []
    for b in bins:
        for n in np.flatnonzero(hit[:, b]):
            detections.append(Detection(int(b), int(n), complex(Y[n, b]), on_grid, False))
    return DetectionReport("classic", detections, threshold, sigma, 0,
                           tuple(int(b) for b in bins if hit[:, b].any()))


def direct_run_batch(cpis: Sequence[CpiDataMatrix], matrix: MeasurementMatrix,
                     rec: RangeRecoveryConfig = RangeRecoveryConfig(), window=None,
                     discard_bins=frozenset(), on_grid: bool = True,
                     peak_frac: float = 0.1) -> list[DetectionReport]:
    """:func:`direct_run` over several CPIs with one batched solver call."""
    if not cpis:
        return []
    L = cpis[0].num_pulses
    sig = [raw_sigma(c.entries) for c in cpis]
    S = np.concatenate([c.entries for c in cpis], axis=1)
    ests = recover_columns(matrix, S, np.repeat(sig, L), rec)
    bins = active_bins(L, discard_bins)
    reports = []
    for i, cpi in enumerate(cpis):
        chunk = ests[i * L:(i + 1) * L]
        theta = np.stack([e.coefficients for e in chunk], axis=1)
        Y = doppler_dft(theta, window).entries
        mag = np.abs(Y[:, bins])
        detections = []
        peak = mag.max() if mag.size else 0.0
        if peak > 0:
            rows, cols = np.nonzero(mag > peak_frac * peak)
            for n, j in sorted(zip(rows, cols), key=lambda rc: (bins[rc[1]], rc[0])):
                detections.append(Detection(int(bins[j]), int(n), complex(Y[n, bins[j]]) / L, on_grid, True))
        reports.append(DetectionReport(
            "direct", detections, 0.0, sig[i], L, tuple(sorted({d.doppler_bin for d in detections})),
            {"nonconverged": sum(not e.converged for e in chunk)}))
    return reports


def direct_run(cpi: CpiDataMatrix, matrix: MeasurementMatrix,
               rec: RangeRecoveryConfig = RangeRecoveryConfig(), window=None,
               discard_bins=frozenset(), on_grid: bool = True, peak_frac: float = 0.1) -> DetectionReport:
    """Recover every pulse, DFT the estimates along slow time, keep strong cells.

    Always ``L`` solver calls; cells above ``peak_frac`` of the strongest
    cell are reported.
    """
    return direct_run_batch([cpi], matrix, rec, window, discard_bins, on_grid, peak_frac)[0]


# ---------------------------------------------------------------- scoring

def target_cell(target: Target, params: RadarParams, t_min: float) -> tuple[float, float]:
    """Fractional (doppler_bin, range_bin) of a target."""
    return doppler_bin_of(target.doppler, params), (target.delay - t_min) / params.tau0


def target_found(report: DetectionReport, target: Target, params: RadarParams, t_min: float) -> bool:
    """A detection within half a cell of the target in range and Doppler."""
    L = params.num_pulses
    fd, fr = target_cell(target, params, t_min)
    for d in report.detections:
        dd = abs((d.doppler_bin - fd + L / 2) % L - L / 2)
        if dd <= 0.5 + 1e-9 and abs(d.range_bin - fr) <= 0.5 + 1e-9:
            return True
    return False


def false_detections(report: DetectionReport, targets: Sequence[Target], params: RadarParams,
                     t_min: float) -> int:
    L = params.num_pulses
    cells = [target_cell(t, params, t_min) for t in targets]
    count = 0
    for d in report.detections:
        near = any(abs((d.doppler_bin - fd + L / 2) % L - L / 2) <= 0.5 + 1e-9
                   and abs(d.range_bin - fr) <= 0.5 + 1e-9 for fd, fr in cells)
        count += not near
    return count
