"""Monte-Carlo harness: scenes, per-experiment runners and CSV metric tables.

Every random draw comes from ``trial_rng(master_seed, experiment, ...)`` so a
(config, seed) pair fixes every output byte. Method comparisons share the
scene and noise realisation of each trial.
"""
from __future__ import annotations

import configparser
import csv
import functools
import math
import zlib
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Callable, Sequence

import numpy as np

from . import pipeline as pl
from .presets import DESK_DELAY_SPAN, FULL_DELAY_SPAN, desk_params, full_params
from .quadcs import MeasurementMatrix, QuadCSConfig, build_measurement_matrix, normalized_gram
from .recovery import RecoveryConfig
from .scene import ClutterParams, NoiseParams, Target
from .waveform import Dictionary, RadarParams, build_dictionary


class ConfigError(ValueError):
    """Invalid experiment configuration (CLI exit code 1)."""


# ---------------------------------------------------------------- config

@dataclass(frozen=True)
class ExperimentConfig:
    scenario: str = "default"
    scale: str = "desk"
    num_pulses: int = 32
    cs_fractions: tuple = (4, 8)
    chip_seed: int = 0
    master_seed: int = 0
    trials: int = 200
    snr_grid: tuple = (-20.0, -16.0, -12.0, -8.0, -4.0, 0.0, 4.0)
    snr_knee_db: float = 0.0
    pfa_target: float = 1e-2
    window: str = "rect"
    kappa: float = 1.5
    support_frac: float = 1e-3
    direct_peak_frac: float = 0.1
    max_iters: int = 2000
    rel_tol: float = 1e-6
    gram_trials: int = 100
    pfa_trials: int = 250
    pfa_lambda_grid: tuple = (0.0, 1.0, 2.0, 3.0, 3.5, 4.0, 4.29)
    noise_scales: tuple = (1.0, 100.0)
    roc_snr_db: float = -18.0
    detect_snr_grid: tuple = (-32.0, -28.0, -24.0, -20.0, -16.0, -12.0, -8.0)
    roc_lambda_grid: tuple = (0.0, 2.0, 3.0, 3.5, 4.0, 4.25, 4.5, 4.75, 5.0, 5.5, 6.0, 7.0, math.inf)
    system_pfa_trials: int = 2000
    system_pfa_grid: tuple = (1e-3, 1e-2, 3e-2, 0.1, 0.2, 0.5)
    sidelobe_weak_snr_db: float = -5.0
    delta_snr_grid: tuple = (0.0, 10.0, 20.0, 30.0, 40.0)
    scr_db: float = -40.0
    beta: float = 4.3
    discard_counts: tuple = (5, 13)
    far_bins: int = 15
    clutter_window: str = "taylor"
    output_path: str = "results"

    def __post_init__(self):
        if self.trials < 1 or self.gram_trials < 1 or self.pfa_trials < 1 or self.system_pfa_trials < 1:
            raise ConfigError("trial counts must be >= 1")
        if self.scale not in ("desk", "full"):
            raise ConfigError(f"unknown scale {self.scale!r}")
        if not self.cs_fractions or any(f <= 0 for f in self.cs_fractions):
            raise ConfigError("cs_fractions must be positive")
        if not 0 < self.pfa_target < 1:
            raise ConfigError("pfa_target must lie in (0, 1)")
        if self.window not in ("rect", "taylor") or self.clutter_window not in ("rect", "taylor"):
            raise ConfigError("window must be 'rect' or 'taylor'")
        if self.kappa < 0:
            raise ConfigError("kappa must be nonnegative")

    @classmethod
    def preset(cls, scale: str = "desk", **overrides) -> "ExperimentConfig":
        if scale == "full":
            base = dict(scale="full", num_pulses=100, trials=1000, snr_grid=(-35.0, -30.0, -25.0, -20.0, -15.0),
                        detect_snr_grid=(-45.0, -40.0, -35.0, -30.0, -25.0), snr_knee_db=-25.0,
                        roc_snr_db=-30.0, sidelobe_weak_snr_db=-20.0)
        elif scale == "desk":
            base = {}
        else:
            raise ConfigError(f"unknown scale {scale!r}")
        base.update(overrides)
        return cls(**base)

    def radar(self) -> RadarParams:
        return desk_params(self.num_pulses) if self.scale == "desk" else replace(full_params(), num_pulses=self.num_pulses)

    def delay_span(self) -> tuple[float, float]:
        return DESK_DELAY_SPAN if self.scale == "desk" else FULL_DELAY_SPAN

    def recovery(self) -> pl.RangeRecoveryConfig:
        solver = RecoveryConfig(max_iters=self.max_iters, rel_tol=self.rel_tol,
                                support_threshold_frac=self.support_frac, debias=True)
        return pl.RangeRecoveryConfig(solver, kappa=self.kappa)

    def to_ini(self) -> str:
        cp = configparser.ConfigParser()
        cp["experiment"] = {f.name: _fmt_value(getattr(self, f.name)) for f in fields(self)}
        lines = []
        for sec in cp.sections():
            lines.append(f"[{sec}]")
            lines += [f"{k} = {v}" for k, v in cp[sec].items()]
        return "\n".join(lines) + "\n"


def _fmt_value(v) -> str:
    if isinstance(v, tuple):
        return ", ".join(_fmt_value(x) for x in v)
    return repr(v) if isinstance(v, float) else str(v)


def _parse_value(name: str, raw: str, default):
    try:
        if isinstance(default, tuple):
            kind = type(default[0]) if default else float
            parts = [p.strip() for p in raw.split(",") if p.strip()]
            return tuple(float(p) if kind is float else int(p) for p in parts)
        if isinstance(default, bool):
            return raw.strip().lower() in ("1", "true", "yes", "on")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        return raw.strip()
    except ValueError as exc:
        raise ConfigError(f"bad value for {name}: {raw!r}") from exc


def load_config(path=None, scale: str | None = None, seed: int | None = None, **overrides) -> ExperimentConfig:
    """Preset for ``scale``, overlaid with an INI file and explicit overrides.

    All sections of the INI file are merged; keys must be
    :class:`ExperimentConfig` field names.
    """
    values: dict = {}
    if path is not None:
        cp = configparser.ConfigParser()
        try:
            with open(path) as fh:
                cp.read_file(fh)
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {path}") from exc
        except configparser.Error as exc:
            raise ConfigError(f"cannot parse {path}: {exc}") from exc
        defaults = ExperimentConfig()
        known = {f.name for f in fields(ExperimentConfig)}
        for sec in cp.sections():
            for key, raw in cp[sec].items():
                if key not in known:
                    raise ConfigError(f"unknown key [{sec}] {key}")
                values[key] = _parse_value(key, raw, getattr(defaults, key))
    sc = scale or values.pop("scale", "desk")
    values.pop("scale", None)
    if seed is not None:
        values["master_seed"] = seed
    values.update(overrides)
    try:
        return ExperimentConfig.preset(sc, **values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def trial_rng(master_seed: int, experiment: str, *keys: int) -> np.random.Generator:
    """Independent stream per (seed, experiment, keys...)."""
    return np.random.default_rng([int(master_seed), zlib.crc32(experiment.encode()), *map(int, keys)])


# ---------------------------------------------------------------- metric table

METRICS = ("Pd", "Pf_detector", "Pf_system", "success_rate", "recovery_calls", "usable_fraction",
           "coherence", "Pf_cell", "energy_ratio", "gain_db")
TABLE_COLUMNS = ["experiment", "variable", "x", "method", "metric", "value", "stderr", "trials"]


@dataclass
class MetricTable:
    experiment: str
    rows: list = field(default_factory=list)

    def add(self, variable: str, x, method: str, metric: str, value: float, stderr: float, n: int):
        if metric not in METRICS:
            raise ValueError(f"unknown metric {metric!r}")
        self.rows.append((variable, float(x), method, metric, float(value), float(stderr), int(n)))

    def add_rate(self, variable, x, method, metric, hits: int, n: int):
        p = hits / n if n else float("nan")
        self.add(variable, x, method, metric, p, binomial_stderr(p, n), n)

    def add_mean(self, variable, x, method, metric, samples):
        s = np.asarray(samples, dtype=float)
        se = float(s.std(ddof=1) / math.sqrt(s.size)) if s.size > 1 else 0.0
        self.add(variable, x, method, metric, float(s.mean()), se, s.size)

    def get(self, method: str, metric: str, x=None):
        out = [(r[1], r[4], r[5]) for r in self.rows if r[2] == method and r[3] == metric]
        if x is None:
            return out
        for xx, v, se in out:
            if math.isclose(xx, x) or (math.isinf(xx) and math.isinf(x)):
                return v, se
        raise KeyError((method, metric, x))

    def methods(self) -> list[str]:
        return sorted({r[2] for r in self.rows})

    def sorted_rows(self):
        return sorted(self.rows, key=lambda r: (r[0], r[2], r[3], r[1]))

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(TABLE_COLUMNS)
            for var, x, method, metric, value, se, n in self.sorted_rows():
                w.writerow([self.experiment, var, _num(x), method, metric, _num(value), _num(se), n])


def _num(v: float) -> str:
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    if math.isnan(v):
        return "nan"
    return f"{v:.10g}"


def binomial_stderr(p: float, n: int) -> float:
    return math.sqrt(max(p * (1 - p), 0.0) / n) if n else float("nan")


# ---------------------------------------------------------------- shared context

@dataclass
class Context:
    config: ExperimentConfig
    params: RadarParams
    dictionary: Dictionary

    @classmethod
    def of(cls, config: ExperimentConfig) -> "Context":
        return _context(config.scale, config.num_pulses)._with(config)

    def _with(self, config):
        return Context(config, self.params, self.dictionary)

    def matrix(self, frac: int, chip_seed: int | None = None) -> MeasurementMatrix:
        seed = self.config.chip_seed if chip_seed is None else chip_seed
        return _matrix(self.config.scale, self.config.num_pulses, float(frac), int(seed))

    @property
    def N(self) -> int:
        return self.dictionary.N

    @property
    def L(self) -> int:
        return self.params.num_pulses

    def noise(self, scale: float = 1.0) -> NoiseParams:
        return NoiseParams(scale, self.params.bandwidth)

    def reflectivity(self, snr_db: float, n0: float = 1.0) -> float:
        return math.sqrt(10 ** (snr_db / 10) * n0 * self.params.bandwidth)

    def detector(self, scale_factor: float, discard=frozenset()) -> pl.DetectorConfig:
        return pl.DetectorConfig(scale_factor=scale_factor, discard_bins=discard)

    def lambda_for(self, pfa: float) -> float:
        return pl.scale_factor_for_pfa(pfa, self.N)


@functools.lru_cache(maxsize=4)
def _context(scale: str, num_pulses: int) -> Context:
    cfg = ExperimentConfig.preset(scale, num_pulses=num_pulses)
    params = cfg.radar()
    return Context(cfg, params, build_dictionary(params, cfg.delay_span()))


@functools.lru_cache(maxsize=32)
def _matrix(scale: str, num_pulses: int, frac: float, chip_seed: int) -> MeasurementMatrix:
    ctx = _context(scale, num_pulses)
    cfg = QuadCSConfig(ctx.params.bandwidth / frac, chip_seed=chip_seed)
    return build_measurement_matrix(cfg, ctx.dictionary)


def method_name(kind: str, frac: int | None = None) -> str:
    return kind if frac is None else f"{kind}_b{int(frac)}"


# ---------------------------------------------------------------- scenes

def _grid_offset(rng, params: RadarParams) -> float:
    """Random range offset in ``[-0.5, 0.5)`` cells, on the analog grid."""
    spc = params.samples_per_cell
    return (int(rng.integers(0, spc)) - spc // 2) / spc


def _off_grid_cell(rng, cell: int, ctx: "Context") -> float:
    """``cell`` plus a random offset, reflected to stay inside the span."""
    off = _grid_offset(rng, ctx.params)
    if not 0 <= cell + off <= ctx.N - 1:
        off = -off
    return cell + off


def make_target(ctx: Context, range_cell: float, doppler_bin: float, reflectivity: float,
                phase: float) -> Target:
    p = ctx.params
    delay = ctx.dictionary.t_min + range_cell * p.tau0
    delay = round(delay * p.grid_rate) / p.grid_rate
    fd = doppler_bin / (p.num_pulses * p.pri)
    fd = (fd + 1 / (2 * p.pri)) % (1 / p.pri) - 1 / (2 * p.pri)
    return Target(delay, fd, reflectivity, phase)


def five_target_scene(ctx: Context, rng: np.random.Generator, allowed_bins: Sequence[int],
                      off_grid: bool) -> list[tuple[float, float, float]]:
    """(range_cell, doppler_bin, phase) of five targets.

    Two share a range cell, two share a Doppler bin, one is free; all cells
    distinct and targets sharing a Doppler bin are at least two cells apart.
    """
    N = ctx.N
    allowed = list(allowed_bins)
    if len(allowed) < 2:
        raise ValueError("need at least two Doppler bins")
    while True:
        d = rng.choice(allowed, size=2, replace=False)
        d3 = rng.choice(allowed)
        d5 = rng.choice(allowed)
        r = rng.integers(0, N, size=4)
        cells = [(r[0], d[0]), (r[0], d[1]), (r[1], d3), (r[2], d3), (r[3], d5)]
        if len(set(cells)) < 5:
            continue
        ok = True
        for i in range(5):
            for j in range(i + 1, 5):
                if cells[i][1] == cells[j][1] and abs(int(cells[i][0]) - int(cells[j][0])) < 2:
                    ok = False
        if ok:
            break
    phases = rng.uniform(0, 2 * np.pi, size=5)
    out = []
    for (rc, db), ph in zip(cells, phases):
        rr, dd = float(rc), float(db)
        if off_grid:
            rr = _off_grid_cell(rng, int(rc), ctx)
            dd += rng.uniform(-0.5, 0.5)
        out.append((rr, dd, float(ph)))
    return out


def sidelobe_pair(ctx: Context, rng: np.random.Generator, offset_cells: float | None = None):
    """Strong on-grid target and a weak one in its first range sidelobe."""
    N, L = ctx.N, ctx.L
    if offset_cells is None:
        spc = ctx.params.samples_per_cell
        offset_cells = (1 + int(rng.integers(0, spc)) / spc) * (1 if rng.random() < 0.5 else -1)
    if abs(offset_cells) < 0.5:
        raise ValueError("weak target would share the strong target's range cell")
    r = int(rng.integers(3, N - 3))
    d = int(rng.integers(0, L))
    ph = rng.uniform(0, 2 * np.pi, size=2)
    return (float(r), float(d), float(ph[0])), (r + offset_cells, float(d), float(ph[1]))


# ---------------------------------------------------------------- trial engine

@dataclass
class TrialSet:
    """Scenes and per-method reports for a block of trials at one setting."""

    targets: list
    reports: dict


def simulate(ctx: Context, scenes: list[list[tuple]], snrs: list[Sequence[float]], seeds: list,
             methods: Sequence[str], det_lambda: float, window: str = "rect", discard=frozenset(),
             clutter_scr_db: float | None = None, off_grid: bool = False) -> TrialSet:
    """Run every method on the same scenes and noise draws.

    ``scenes[i]`` lists (range_cell, doppler_bin, phase) per target and
    ``snrs[i]`` the matching per-target SNR_in in dB. ``methods`` take the
    forms ``classic``, ``cosapd_b<k>`` and ``direct_b<k>``.
    """
    cfg = ctx.config
    rec = cfg.recovery()
    det = ctx.detector(det_lambda, discard)
    noise = ctx.noise()
    targets = []
    for scene, snr in zip(scenes, snrs):
        targets.append([make_target(ctx, rc, db, ctx.reflectivity(s), ph) for (rc, db, ph), s in zip(scene, snr)])
    reports: dict[str, list] = {}
    fracs = sorted({int(m.split("_b")[1]) for m in methods if "_b" in m})
    for frac in fracs:
        A = ctx.matrix(frac)
        cpis = []
        for i, tg in enumerate(targets):
            rng = trial_rng(*seeds[i], frac)
            cc = None
            if clutter_scr_db is not None:
                rho2 = max(t.reflectivity for t in tg) ** 2 if tg else ctx.reflectivity(0.0) ** 2
                clutter = ClutterParams(rho2 / 10 ** (clutter_scr_db / 10), cfg.beta)
                cc = pl.clutter_field(clutter, A.N, ctx.params, trial_rng(*seeds[i], 999))
            cpis.append(pl.assemble_cpi(tg, A, ctx.dictionary, noise, rng=rng, clutter_coeffs=cc))
        if method_name("cosapd", frac) in methods:
            reports[method_name("cosapd", frac)] = pl.cosapd_run_batch(cpis, A, det, rec, window, not off_grid)
        if method_name("direct", frac) in methods:
            reports[method_name("direct", frac)] = pl.direct_run_batch(cpis, A, rec, window, discard, not off_grid,
                                                                         cfg.direct_peak_frac)
    if "classic" in methods:
        out = []
        for i, tg in enumerate(targets):
            rng = trial_rng(*seeds[i], 0)
            cc = None
            if clutter_scr_db is not None:
                rho2 = max(t.reflectivity for t in tg) ** 2
                clutter = ClutterParams(rho2 / 10 ** (clutter_scr_db / 10), cfg.beta)
                cc = pl.clutter_field(clutter, ctx.N, ctx.params, trial_rng(*seeds[i], 999))
            nyq = pl.nyquist_cpi(tg, ctx.dictionary, noise, rng, cc)
            out.append(pl.classic_run(nyq, ctx.dictionary, det, window, not off_grid))
        reports["classic"] = out
    return TrialSet(targets, reports)


def all_found(report: pl.DetectionReport, targets, ctx: Context) -> bool:
    return all(pl.target_found(report, t, ctx.params, ctx.dictionary.t_min) for t in targets)


# ---------------------------------------------------------------- experiments

def run_gram(config: ExperimentConfig) -> MetricTable:
    """Max off-diagonal of the trial-averaged normalised |Gram|, per B_cs.

    Also reports the mean single-matrix coherence and column-energy spread.
    """
    ctx = Context.of(config)
    table = MetricTable("gram")
    for frac in config.cs_fractions:
        acc = None
        single, ratio = [], []
        for seed in range(config.gram_trials):
            A = ctx.matrix(frac, chip_seed=config.chip_seed + seed)
            G = np.abs(normalized_gram(A))
            acc = G if acc is None else acc + G
            off = G - np.diag(np.diag(G))
            single.append(off.max())
            e = A.column_energy / A.nominal_column_energy
            ratio.append(e.max() / e.min())
        avg = acc / config.gram_trials
        np.fill_diagonal(avg, 0)
        name = method_name("quadcs", frac)
        table.add("chip_seeds", config.gram_trials, name, "coherence", avg.max(), 0.0, config.gram_trials)
        table.add_mean("single", 1, name, "coherence", single)
        table.add_mean("single", 1, name, "energy_ratio", ratio)
    return table


def _noise_cpis(ctx: Context, A: MeasurementMatrix, exp: str, trials: int, n0: float, key: int):
    """Noise-only CPIs; the same standard normals for every ``n0``."""
    out = []
    var = 2 * A.config.cs_bandwidth
    for t in range(trials):
        rng = trial_rng(ctx.config.master_seed, exp, key, t)
        z = (rng.standard_normal((A.M, ctx.L)) + 1j * rng.standard_normal((A.M, ctx.L))) * math.sqrt(var / 2)
        out.append(pl.CpiDataMatrix(z * math.sqrt(n0), meta={"config_hash": A.digest()}))
    return out


def run_pfa_sweep(config: ExperimentConfig) -> MetricTable:
    """Per-cell and per-bin detector P_F vs scale factor at several noise powers."""
    ctx = Context.of(config)
    table = MetricTable("pfa")
    for frac in config.cs_fractions:
        A = ctx.matrix(frac)
        for scale in config.noise_scales:
            cells = []
            binmax = []
            for cpi in _noise_cpis(ctx, A, "pfa", config.pfa_trials, scale, int(frac)):
                X = pl.matched_filter(A, pl.doppler_dft(cpi, config.window))
                sigma = pl.estimate_sigma(A, X)
                mag = np.abs(X) / sigma
                cells.append(mag.ravel())
                binmax.append(mag.max(axis=0))
            cells = np.concatenate(cells)
            binmax = np.concatenate(binmax)
            name = f"cosapd_b{int(frac)}@N0x{scale:g}"
            for lam in config.pfa_lambda_grid:
                table.add_rate("lambda0", lam, name, "Pf_cell", int(np.sum(cells >= lam)), cells.size)
                table.add_rate("lambda0", lam, name, "Pf_detector", int(np.sum(binmax >= lam)), binmax.size)
    for lam in config.pfa_lambda_grid:
        table.add("lambda0", lam, "theory", "Pf_cell", pl.pfa_per_cell(lam), 0.0, 0)
        table.add("lambda0", lam, "theory", "Pf_detector", pl.pfa_joint(lam, ctx.N), 0.0, 0)
    return table


def _roc_scene(ctx: Context, rng, off_grid: bool):
    """Three targets in one Doppler bin at distinct, separated ranges."""
    d = int(rng.integers(0, ctx.L))
    while True:
        r = np.sort(rng.choice(ctx.N, size=3, replace=False))
        if np.all(np.diff(r) >= 2):
            break
    out = []
    dd = float(d) + (rng.uniform(-0.5, 0.5) if off_grid else 0.0)
    for rc in r:
        rr = _off_grid_cell(rng, int(rc), ctx) if off_grid else float(rc)
        out.append((rr, dd, float(rng.uniform(0, 2 * np.pi))))
    return out, d


def _bin_stats(ctx: Context, scenes, snr_db: float, seeds, off_grid: bool, window: str):
    """Per-method arrays of per-bin detector statistics (trials x L)."""
    noise = ctx.noise()
    stats: dict[str, list] = {}
    targets = [[make_target(ctx, rc, db, ctx.reflectivity(snr_db), ph) for rc, db, ph in sc] for sc in scenes]
    det = ctx.detector(0.0)
    for frac in ctx.config.cs_fractions:
        A = ctx.matrix(frac)
        name = method_name("cosapd", frac)
        for i, tg in enumerate(targets):
            cpi = pl.assemble_cpi(tg, A, ctx.dictionary, noise, rng=trial_rng(*seeds[i], frac))
            stats.setdefault(name, []).append(pl.detector_statistics(cpi, A, det, window)[0])
    for i, tg in enumerate(targets):
        nyq = pl.nyquist_cpi(tg, ctx.dictionary, noise, trial_rng(*seeds[i], 0))
        mf = pl.classic_matched_filter(nyq, ctx.dictionary)
        Y = np.abs(pl.doppler_dft(mf, window).entries)
        sigma = float(np.mean(Y) / pl.RAYLEIGH_MEAN)
        stats.setdefault("classic", []).append(Y.max(axis=0) / sigma)
    return {k: np.array(v) for k, v in stats.items()}


def _pd_pf(stat: np.ndarray, tbins: np.ndarray, lam: float, L: int):
    """Hits in the target bins and in bins at least two away from them."""
    idx = np.arange(stat.shape[0])
    hit = stat >= lam
    pd_hits = int(np.sum(hit[idx, tbins]))
    dist = np.abs((np.arange(L)[None, :] - tbins[:, None] + L // 2) % L - L // 2)
    free = dist >= 2
    return pd_hits, stat.shape[0], int(np.sum(hit & free)), int(np.sum(free))


def run_roc(config: ExperimentConfig) -> MetricTable:
    """(P_F, P_D) per scale factor; three equal-SNR targets sharing a Doppler bin."""
    ctx = Context.of(config)
    table = MetricTable("roc")
    for variant, off in (("on_grid", False), ("off_grid", True)):
        scenes, tbins, seeds = [], [], []
        for t in range(config.trials):
            sc, d = _roc_scene(ctx, trial_rng(config.master_seed, "roc_scene", off, t), off)
            scenes.append(sc)
            tbins.append(d)
            seeds.append((config.master_seed, "roc", int(off), t))
        stats = _bin_stats(ctx, scenes, config.roc_snr_db, seeds, off, config.window)
        tb = np.array(tbins)
        for name, st in stats.items():
            for lam in config.roc_lambda_grid:
                pdh, n, pfh, nf = _pd_pf(st, tb, lam, ctx.L)
                table.add_rate("lambda0", lam, f"{name}@{variant}", "Pd", pdh, n)
                table.add_rate("lambda0", lam, f"{name}@{variant}", "Pf_detector", pfh, nf)
    return table


def run_detection_vs_snr(config: ExperimentConfig) -> MetricTable:
    """P_D vs SNR_in at the scale factor giving detector P_F = ``pfa_target``."""
    ctx = Context.of(config)
    table = MetricTable("detect_snr")
    lam = ctx.lambda_for(config.pfa_target)
    scenes, tbins, seeds = [], [], []
    for t in range(config.trials):
        sc, d = _roc_scene(ctx, trial_rng(config.master_seed, "dsnr_scene", t), False)
        scenes.append(sc)
        tbins.append(d)
        seeds.append((config.master_seed, "dsnr", t))
    tb = np.array(tbins)
    for snr in config.detect_snr_grid:
        stats = _bin_stats(ctx, scenes, snr, seeds, False, config.window)
        for name, st in stats.items():
            pdh, n, pfh, nf = _pd_pf(st, tb, lam, ctx.L)
            table.add_rate("snr_db", snr, name, "Pd", pdh, n)
            table.add_rate("snr_db", snr, name, "Pf_detector", pfh, nf)
    return table


def snr_gap_knee(table: MetricTable, frac: int = 8, gap: float = 0.05) -> float | None:
    """Lowest grid SNR above which classic minus CoSaPD P_D stays below ``gap``."""
    c = {x: v for x, v, _ in table.get("classic", "Pd")}
    s = {x: v for x, v, _ in table.get(method_name("cosapd", frac), "Pd")}
    xs = sorted(c)
    knee = None
    for x in reversed(xs):
        if c[x] - s[x] < gap:
            knee = x
        else:
            break
    return knee


def run_system_pfa(config: ExperimentConfig) -> MetricTable:
    """Noise-only detector P_F and post-recovery system P_F (per Doppler bin)."""
    ctx = Context.of(config)
    rec = config.recovery()
    table = MetricTable("system_pfa")
    lams = [ctx.lambda_for(p) for p in config.system_pfa_grid]
    lam_min = min(lams)
    for frac in config.cs_fractions:
        A = ctx.matrix(frac)
        stats, false = [], []
        block = 250
        for start in range(0, config.system_pfa_trials, block):
            n = min(block, config.system_pfa_trials - start)
            cpis = _noise_cpis_block(ctx, A, "system_pfa", start, n, int(frac))
            det = ctx.detector(lam_min)
            reports = pl.cosapd_run_batch(cpis, A, det, rec, config.window)
            for cpi, r in zip(cpis, reports):
                st = pl.detector_statistics(cpi, A, det, config.window)[0]
                nonempty = np.zeros(ctx.L, dtype=bool)
                for d in r.detections:
                    nonempty[d.doppler_bin] = True
                stats.append(st)
                false.append(nonempty)
        stats = np.concatenate(stats)
        false = np.concatenate(false)
        name = method_name("cosapd", frac)
        for p, lam in zip(config.system_pfa_grid, lams):
            hit = stats >= lam
            table.add_rate("pfa_design", p, name, "Pf_detector", int(hit.sum()), hit.size)
            table.add_rate("pfa_design", p, name, "Pf_system", int((hit & false).sum()), hit.size)
    return table


def _noise_cpis_block(ctx, A, exp, start, n, key):
    out = []
    var = 2 * A.config.cs_bandwidth
    for t in range(start, start + n):
        rng = trial_rng(ctx.config.master_seed, exp, key, t)
        out.append(pl.CpiDataMatrix(pl.complex_noise(var, (A.M, ctx.L), rng)))
    return out


@functools.lru_cache(maxsize=4)
def _success_trials(config: ExperimentConfig, off_grid: bool) -> dict:
    """Per-SNR TrialSets for the five-target scene (shared by success and calls)."""
    ctx = Context.of(config)
    methods = ["classic"] + [method_name(k, f) for f in config.cs_fractions for k in ("cosapd", "direct")]
    lam = ctx.lambda_for(config.pfa_target)
    scenes, seeds = [], []
    for t in range(config.trials):
        rng = trial_rng(config.master_seed, "success_scene", off_grid, t)
        scenes.append(five_target_scene(ctx, rng, range(ctx.L), off_grid))
        seeds.append((config.master_seed, "success", int(off_grid), t))
    out = {}
    for snr in config.snr_grid:
        out[snr] = simulate(ctx, scenes, [[snr] * 5] * len(scenes), seeds, methods, lam,
                            config.window, off_grid=off_grid)
    return out


def run_success_rate(config: ExperimentConfig) -> MetricTable:
    """Five-target success rate vs SNR_in for every method, on and off grid."""
    ctx = Context.of(config)
    table = MetricTable("success")
    for variant, off in (("on_grid", False), ("off_grid", True)):
        for snr, ts in _success_trials(config, off).items():
            for name, reps in ts.reports.items():
                hits = sum(all_found(r, tg, ctx) for r, tg in zip(reps, ts.targets))
                table.add_rate("snr_db", snr, f"{name}@{variant}", "success_rate", hits, len(reps))
                fa = [pl.false_detections(r, tg, ctx.params, ctx.dictionary.t_min) > 0
                      for r, tg in zip(reps, ts.targets)]
                table.add_rate("snr_db", snr, f"{name}@{variant}", "Pf_system", int(sum(fa)), len(reps))
    return table


def run_recovery_calls(config: ExperimentConfig) -> MetricTable:
    """Mean solver invocations per CPI vs SNR_in, CoSaPD vs direct."""
    table = MetricTable("calls")
    for snr, ts in _success_trials(config, False).items():
        for name, reps in ts.reports.items():
            if name == "classic":
                continue
            table.add_mean("snr_db", snr, name, "recovery_calls", [r.bins_recovered for r in reps])
    return table


def run_sidelobe_target(config: ExperimentConfig) -> MetricTable:
    """Weak-target success vs strong-minus-weak SNR, target in the first sidelobe."""
    ctx = Context.of(config)
    table = MetricTable("sidelobe")
    lam = ctx.lambda_for(config.pfa_target)
    methods = ["classic"] + [method_name("cosapd", f) for f in config.cs_fractions]
    scenes, seeds = [], []
    for t in range(config.trials):
        strong, weak = sidelobe_pair(ctx, trial_rng(config.master_seed, "sidelobe_scene", t))
        scenes.append([strong, weak])
        seeds.append((config.master_seed, "sidelobe", t))
    w = config.sidelobe_weak_snr_db
    for delta in config.delta_snr_grid:
        ts = simulate(ctx, scenes, [[w + delta, w]] * len(scenes), seeds, methods, lam, config.window)
        for name, reps in ts.reports.items():
            hits = sum(pl.target_found(r, tg[1], ctx.params, ctx.dictionary.t_min)
                       for r, tg in zip(reps, ts.targets))
            table.add_rate("delta_snr_db", delta, name, "success_rate", hits, len(reps))
    return table


def far_bins(L: int, min_dist: int) -> list[int]:
    return [b for b in range(L) if min(b, L - b) >= min_dist]


def run_clutter(config: ExperimentConfig) -> MetricTable:
    """Success rate and usable Doppler fraction under strong low-Doppler clutter.

    Uses ``clutter_window`` and the largest compression ratio. Every discard
    count processes the same scenes, drawn outside the widest discard set,
    with and without clutter. ``far`` rows restrict targets to bins at
    least ``far_bins`` from zero Doppler.
    """
    ctx = Context.of(config)
    table = MetricTable("clutter")
    frac = max(config.cs_fractions)
    name = method_name("cosapd", frac)
    lam = ctx.lambda_for(config.pfa_target)
    L = ctx.L
    win = config.clutter_window
    widest = pl.zero_doppler_bins(max(config.discard_counts), L)
    common = [b for b in range(L) if b not in widest]
    far = far_bins(L, config.far_bins)
    groups = [("", common, config.discard_counts), ("far_", far, (max(config.discard_counts),))]
    for prefix, allowed, counts in groups:
        scenes, seeds = [], []
        for t in range(config.trials):
            rng = trial_rng(config.master_seed, f"clutter_scene_{prefix}", t)
            scenes.append(five_target_scene(ctx, rng, allowed, False))
            seeds.append((config.master_seed, f"clutter_{prefix}", t))
        for d in counts:
            discard = pl.zero_doppler_bins(d, L)
            for snr in config.snr_grid:
                for cl, scr in (("clutter", config.scr_db), ("noclutter", None)):
                    ts = simulate(ctx, scenes, [[snr] * 5] * len(scenes), seeds, [name], lam, win, discard,
                                  clutter_scr_db=scr)
                    hits = sum(all_found(r, tg, ctx) for r, tg in zip(ts.reports[name], ts.targets))
                    table.add_rate("snr_db", snr, f"{name}@{prefix}d{d}_{cl}", "success_rate", hits, config.trials)
    # usable Doppler fraction: one random-range target in a uniformly drawn bin
    for d in config.discard_counts:
        discard = pl.zero_doppler_bins(d, L)
        scenes, seeds, dropped = [], [], []
        for t in range(config.trials):
            rng = trial_rng(config.master_seed, "usable_scene", t)
            b = int(rng.integers(0, L))
            scenes.append([(float(rng.integers(0, ctx.N)), float(b), float(rng.uniform(0, 2 * np.pi)))])
            seeds.append((config.master_seed, "usable", t))
            dropped.append(b in discard)
        for snr in config.snr_grid:
            ts = simulate(ctx, scenes, [[snr]] * len(scenes), seeds, [name], lam, win, discard,
                          clutter_scr_db=config.scr_db)
            hits = sum((not dr) and all_found(r, tg, ctx)
                       for r, tg, dr in zip(ts.reports[name], ts.targets, dropped))
            table.add_rate("snr_db", snr, f"{name}@d{d}", "usable_fraction", hits, config.trials)
    return table


EXPERIMENTS: dict[str, Callable[[ExperimentConfig], MetricTable]] = {
    "gram": run_gram,
    "pfa": run_pfa_sweep,
    "roc": run_roc,
    "system-pfa": run_system_pfa,
    "detect-snr": run_detection_vs_snr,
    "success": run_success_rate,
    "calls": run_recovery_calls,
    "sidelobe": run_sidelobe_target,
    "clutter": run_clutter,
}
