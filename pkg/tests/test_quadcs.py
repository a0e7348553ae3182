import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cosapd.quadcs import (
    MeasurementMatrix, QuadCSConfig, _chain, bandpass_sample_rate, build_measurement_matrix, chipping_loss,
    front_end, gen_chipping, gram_metrics, max_l_index, normalized_gram, sample_matrix_domain,
)
from cosapd.scene import NoiseParams, Target, gen_noise_if, if_echo
from cosapd.waveform import build_dictionary


def _rel(a, b):
    return np.linalg.norm(a - b) / np.linalg.norm(b)


class TestBandpassRate:
    def test_reference_value(self):
        assert bandpass_sample_rate(75e6, 10e6, 3) == pytest.approx(300e6 / 13)
        assert bandpass_sample_rate(75e6, 10e6, 3) == pytest.approx(23.0769e6, rel=1e-5)

    @pytest.mark.parametrize("l", [0, -1, 4])
    def test_index_out_of_range(self, l):
        assert max_l_index(75e6, 10e6) == 3
        with pytest.raises(ValueError):
            bandpass_sample_rate(75e6, 10e6, l)

    def test_desk_defaults(self, params):
        c4 = QuadCSConfig(params.bandwidth / 4).resolved(params)
        c8 = QuadCSConfig(params.bandwidth / 8).resolved(params)
        assert (c4.l_index, c8.l_index) == (3, 7)
        assert c4.chip_rate == params.bandwidth
        assert c8.sample_rate(params) == pytest.approx(2.5e6)
        assert (c4.num_samples(params), c8.num_samples(params)) == (89, 40)

    def test_config_errors(self, params):
        with pytest.raises(ValueError):
            QuadCSConfig(0.0)
        with pytest.raises(ValueError):
            QuadCSConfig(1e6, filter_kind="fir")
        with pytest.raises(ValueError):
            QuadCSConfig(params.bandwidth).resolved(params)

    def test_undersampling(self, params):
        # N counted over the whole PRI
        n_pri = math.ceil(params.pri / params.tau0)
        assert QuadCSConfig(params.bandwidth / 8).num_samples(params) <= math.ceil(n_pri / 8) + 1
        # B/4 cannot reach the minimum rate 2 B_cs at this IF (l is capped at 3)
        for frac in (4, 8):
            M = QuadCSConfig(params.bandwidth / frac).num_samples(params)
            assert M / n_pri == pytest.approx(1 / frac, rel=0.15)


class TestChipping:
    def test_deterministic(self, params):
        c = QuadCSConfig(params.bandwidth / 4, chip_seed=5)
        np.testing.assert_array_equal(gen_chipping(c, params), gen_chipping(c, params))
        assert not np.array_equal(gen_chipping(c, params), gen_chipping(QuadCSConfig(c.cs_bandwidth), params))

    def test_piecewise_constant(self, params):
        p = gen_chipping(QuadCSConfig(params.bandwidth / 4), params)
        chips = p.reshape(-1, params.samples_per_cell)
        assert np.all(chips == chips[:, :1])
        assert set(np.unique(p)) == {-1.0, 1.0}

    def test_statistics(self, params):
        n = 10**5
        chips = gen_chipping(QuadCSConfig(params.bandwidth / 4, chip_seed=3), params,
                             duration=n / params.bandwidth)[::params.samples_per_cell]
        assert chips.size == n
        bound = 3 / math.sqrt(n)
        assert abs(chips.mean()) < bound
        for lag in (1, 2, 5):
            assert abs(np.mean(chips[:-lag] * chips[lag:])) < bound

    def test_non_multiple_grid(self, params):
        with pytest.raises(ValueError):
            gen_chipping(QuadCSConfig(params.bandwidth / 4, chip_rate=0.7e7), params)

    def test_chipping_loss(self, params):
        assert chipping_loss(params, params.bandwidth) == pytest.approx(0.77369, abs=1e-4)
        # fast chips spread the power over R, leaving B / R in band
        assert chipping_loss(params, 1e10) == pytest.approx(params.bandwidth / 1e10, rel=1e-3)


class TestFrontEnd:
    def test_zero_input(self, params):
        out = front_end(np.zeros(params.grid_len), QuadCSConfig(params.bandwidth / 4), params)
        assert out.shape == (89,) and not np.any(out)

    def test_wrong_grid(self, params):
        with pytest.raises(ValueError):
            front_end(np.zeros(params.grid_len - 1), QuadCSConfig(params.bandwidth / 4), params)

    def test_noise_variance(self, params, rng):
        cfg = QuadCSConfig(params.bandwidth / 4)
        noise = NoiseParams(0.3, params.bandwidth)
        out = np.concatenate([front_end(gen_noise_if(noise, params, rng, num=250), cfg, params).ravel()
                              for _ in range(5)])
        assert out.size > 10**5
        assert np.mean(np.abs(out) ** 2) == pytest.approx(2 * noise.n0 * cfg.cs_bandwidth, rel=0.05)
        # circular: I and Q carry equal power and are uncorrelated
        assert np.mean(out.real**2) == pytest.approx(np.mean(out.imag**2), rel=0.05)
        assert abs(np.mean(out**2)) < 0.05 * np.mean(np.abs(out) ** 2)

    @pytest.mark.parametrize("fixture", ["matrix_b4", "matrix_b8"])
    @pytest.mark.parametrize("phase", [0.0, 0.8, np.pi / 2])
    def test_single_target_matches_column(self, request, params, dictionary, fixture, phase):
        # the residual is the conjugate image of the chirp's spectral tail
        A = request.getfixturevalue(fixture)
        n = 77
        t = Target(n * params.tau0, 0.0, 1.0, phase)
        out = front_end(if_echo([t], 1, dictionary), A.config, params)
        assert _rel(out, A.entries[:, n] * np.exp(1j * phase)) < 1e-2

    def test_column_is_complex_linear_part(self, params, dictionary, matrix_b8):
        # the real chain is rho a + conj(rho) b; the column is a
        n = 120
        t0, t1 = (Target(n * params.tau0, 0.0, 1.0, ph) for ph in (0.0, np.pi / 2))
        r0 = front_end(if_echo([t0], 1, dictionary), matrix_b8.config, params)
        r1 = front_end(if_echo([t1], 1, dictionary), matrix_b8.config, params)
        assert _rel((r0 - 1j * r1) / 2, matrix_b8.entries[:, n]) < 1e-10

    @pytest.mark.parametrize("seed", range(3))
    def test_oracle_equivalence(self, params, dictionary, matrix_b8, seed):
        rng = np.random.default_rng(seed)
        cells = rng.choice(dictionary.N, 4, replace=False)
        targets = [Target(c * params.tau0, 0.0, rng.uniform(0.5, 2), rng.uniform(0, 2 * np.pi)) for c in cells]
        out = front_end(if_echo(targets, 1, dictionary), matrix_b8.config, params)
        rho = np.zeros(dictionary.N, dtype=complex)
        for t, c in zip(targets, cells):
            rho[c] = t.pulse_amplitude(1, params.pri)
        ref = sample_matrix_domain(rho, matrix_b8, 0.0)
        e = 8
        assert _rel(out[e:-e], ref[e:-e]) < 1e-2

    def test_snr_preserved(self, params, matrix_b4, matrix_b8):
        # per-sample SNR over the echo's support equals the received SNR
        noise = NoiseParams(1.0, params.bandwidth)
        snr_in = 1.0
        for A in (matrix_b4, matrix_b8):
            t_cs = A.config.t_cs(params)
            per_sample = np.mean(A.column_energy) / (params.pulse_width / t_cs)
            snr_cs = snr_in * noise.power * per_sample / (2 * noise.n0 * A.config.cs_bandwidth)
            assert 10 * np.log10(snr_cs / snr_in) == pytest.approx(0.0, abs=1.0)


class TestMeasurementMatrix:
    def test_single_atom_dictionary(self, params):
        d = build_dictionary(params, (1e-6, 1e-6 + params.tau0))
        assert d.N == 1
        cfg = QuadCSConfig(params.bandwidth / 4)
        A = build_measurement_matrix(cfg, d)
        z = d.atom(0) * np.exp(2j * np.pi * params.if_freq * params.time_grid())
        chain = _chain(params, cfg.resolved(params))
        np.testing.assert_allclose(A.entries[:, 0], chain.from_analytic(chain.positive(z))[0], atol=1e-12)

    def test_deterministic(self, params, dictionary, matrix_b4):
        again = build_measurement_matrix(QuadCSConfig(params.bandwidth / 4, chip_seed=0), dictionary)
        np.testing.assert_array_equal(again.entries, matrix_b4.entries)

    def test_shapes_and_finite(self, matrix_b4, matrix_b8):
        assert matrix_b4.entries.shape == (89, 256)
        assert matrix_b8.entries.shape == (40, 256)
        assert np.all(np.isfinite(matrix_b4.entries))
        assert not matrix_b4.entries.flags.writeable

    @pytest.mark.parametrize("fixture", ["matrix_b4", "matrix_b8"])
    def test_column_energy(self, request, fixture):
        # with only T_b B_cs = 16 or 8 chips per column the spread is wide;
        # the mean stays on the nominal value
        A = request.getfixturevalue(fixture)
        rel = A.column_energy / A.nominal_column_energy
        assert rel.mean() == pytest.approx(1.0, abs=0.15)
        assert 0.2 < rel.min() and rel.max() < 2.5

    def test_matched_filter_columns(self, matrix_b4):
        mf = matrix_b4.matched_filter()
        np.testing.assert_allclose(np.sum(np.abs(mf) ** 2, axis=0), matrix_b4.nominal_column_energy)

    def test_save_load(self, tmp_path, matrix_b8):
        path = tmp_path / "m.npz"
        matrix_b8.save(path)
        back = MeasurementMatrix.load(path)
        np.testing.assert_array_equal(back.entries, matrix_b8.entries)
        assert back.config == matrix_b8.config and back.params == matrix_b8.params
        assert back.digest() == matrix_b8.digest()

    def test_load_rejects_tampered_header(self, tmp_path, matrix_b8):
        import json
        path = tmp_path / "m.npz"
        matrix_b8.save(path)
        with np.load(path) as f:
            header = json.loads(str(f["header"]))
            entries = f["entries"]
        header["config"]["chip_seed"] = 99
        np.savez(path, entries=entries, header=json.dumps(header))
        with pytest.raises(ValueError):
            MeasurementMatrix.load(path)


class TestSampleMatrixDomain:
    def test_zero(self, matrix_b4):
        assert not np.any(sample_matrix_domain(np.zeros(256), matrix_b4, 0.0))

    def test_unit_vector(self, matrix_b4):
        e = np.zeros(256)
        e[31] = 1
        np.testing.assert_array_equal(sample_matrix_domain(e, matrix_b4, 0.0), matrix_b4.entries[:, 31])

    def test_dimension_mismatch(self, matrix_b4):
        with pytest.raises(ValueError):
            sample_matrix_domain(np.zeros(255), matrix_b4, 0.0)

    def test_needs_rng(self, matrix_b4):
        with pytest.raises(ValueError):
            sample_matrix_domain(np.zeros(256), matrix_b4, 1.0)

    def test_noise_variance(self, matrix_b8, rng):
        out = sample_matrix_domain(np.zeros((256, 25000)), matrix_b8, 2.0, rng)
        assert out.size == 10**6
        assert np.mean(np.abs(out) ** 2) == pytest.approx(2.0, rel=0.02)

    @given(st.integers(0, 2**31), st.floats(0.1, 10))
    @settings(max_examples=20, deadline=None)
    def test_linear(self, matrix_b4, seed, c):
        rng = np.random.default_rng(seed)
        a = rng.standard_normal(256) + 1j * rng.standard_normal(256)
        b = rng.standard_normal(256)
        lhs = sample_matrix_domain(c * a + b, matrix_b4, 0.0)
        rhs = c * sample_matrix_domain(a, matrix_b4, 0.0) + sample_matrix_domain(b, matrix_b4, 0.0)
        np.testing.assert_allclose(lhs, rhs, atol=1e-9 * np.abs(rhs).max())


class TestGram:
    def test_identity(self):
        assert gram_metrics(np.eye(4)) == (0.0, 1.0)

    def test_duplicate_column(self):
        A = np.array([[1.0, 2.0, 0.0], [0.0, 0.0, 1.0]])
        assert gram_metrics(A)[0] == pytest.approx(1.0)

    def test_zero_column(self):
        with pytest.raises(ValueError):
            gram_metrics(np.array([[1.0, 0.0], [0.0, 0.0]]))

    def test_desk_coherence(self, matrix_b4, matrix_b8):
        # single-matrix worst case; the trial-averaged value is far lower
        mu4, _ = gram_metrics(matrix_b4)
        mu8, _ = gram_metrics(matrix_b8)
        assert mu4 < 0.7 and mu8 < 0.9
        assert mu4 < mu8

    def test_normalized_gram(self, matrix_b4):
        G = normalized_gram(matrix_b4)
        np.testing.assert_allclose(np.diag(G).real, 1.0)
        np.testing.assert_allclose(G, G.conj().T, atol=1e-12)
