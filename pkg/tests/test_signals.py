import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mfnn.errors import ConfigError, FormatError, ShapeError
from mfnn.signals import (LOAD_PROFILES, ArcParams, DfsSpectrum, SignalDataset, add_noise_snr, balance,
                          balance_and_split, class_table, dfs_direct, dfs_forward, dfs_inverse,
                          gen_arc_waveform, get_profile, make_dataset, measured_snr_db, signal_power,
                          window_and_downsample)

SWEEP = list(range(1, 65)) + [100, 256, 1000, 1024]


def dfs_loop(x):
    """Textbook double loop, kept independent of the vectorised reference."""
    n = len(x)
    return np.array([sum(x[i] * complex(math.cos(-2 * math.pi * k * i / n), math.sin(-2 * math.pi * k * i / n))
                         for i in range(n)) for k in range(n)])


class TestDfs:
    def test_constant(self):
        np.testing.assert_array_equal(dfs_forward([1, 1, 1, 1], method="direct").coefficients, [4, 0, 0, 0])
        np.testing.assert_array_equal(dfs_forward([1, 1, 1, 1]).coefficients, [4, 0, 0, 0])

    def test_unit_impulse(self):
        for method in ("direct", "fft"):
            np.testing.assert_array_equal(dfs_forward([1, 0, 0, 0], method=method).coefficients, [1, 1, 1, 1])

    def test_direct_matches_loop(self, rng):
        x = rng.standard_normal(17)
        np.testing.assert_allclose(dfs_direct(x), dfs_loop(x), atol=1e-11)

    def test_single_harmonic_inverse(self):
        N = 16
        X = np.zeros(N, complex)
        X[1] = X[N - 1] = N / 2
        np.testing.assert_allclose(dfs_inverse(DfsSpectrum(X)), np.cos(2 * np.pi * np.arange(N) / N), atol=1e-14)

    def test_zero_spectrum(self):
        assert np.all(dfs_inverse(DfsSpectrum(np.zeros(8, complex))) == 0)

    @pytest.mark.parametrize("n", SWEEP)
    def test_round_trip_and_parseval(self, n):
        x = np.random.default_rng(n).standard_normal(n)
        for method in ("direct", "fft"):
            spec = dfs_forward(x, method=method)
            X = spec.coefficients
            assert spec.n == n
            assert np.max(np.abs(dfs_inverse(spec, method=method) - x)) <= 1e-9
            assert abs(np.sum(x ** 2) - np.sum(np.abs(X) ** 2) / n) <= 1e-9 * max(1.0, np.sum(x ** 2))
            assert spec.is_conjugate_symmetric(1e-9)

    @pytest.mark.parametrize("n", [1, 7, 64, 1000, 1024])
    def test_fast_path_matches_reference(self, n):
        x = np.random.default_rng(n).standard_normal(n)
        diff = dfs_forward(x).coefficients - dfs_forward(x, method="direct").coefficients
        assert np.max(np.abs(diff)) <= 1e-9 * max(1.0, np.abs(x).sum())

    def test_asymmetric_spectrum_rejected(self):
        with pytest.raises(ConfigError):
            dfs_inverse(DfsSpectrum(np.array([0, 1j, 0, 0])))
        out = dfs_inverse(DfsSpectrum(np.array([0, 1j, 0, 0])), real=False)
        assert np.iscomplexobj(out)

    def test_empty_rejected(self):
        with pytest.raises(ShapeError):
            dfs_forward([])

    def test_frequencies(self):
        assert dfs_forward(np.zeros(4), dt=0.01).frequencies.tolist() == [0, 25, 50, 75]

    def test_decimated_tone_bin(self):
        fs, f0, factor = 10_000, 300.0, 5
        x = np.sin(2 * np.pi * f0 * np.arange(10_000) / fs)
        w = window_and_downsample(x, 5_000, 5_000, factor)[0, 0]
        spec = dfs_forward(w, dt=factor / fs)
        k = int(np.argmax(np.abs(spec.coefficients[:spec.n // 2])))
        assert spec.frequencies[k] == pytest.approx(f0)


class TestGenerator:
    def test_normal_resistive_is_pure_tone(self):
        x = gen_arc_waveform("normal", "resistive", 0.2, 10_000, seed=3)
        X = np.abs(dfs_forward(x, dt=1e-4).coefficients[:1000])
        assert np.argmax(X) == 10  # 50 Hz over 0.2 s
        assert X[10] ** 2 / np.sum(X ** 2) > 0.999

    def test_deterministic(self):
        a = gen_arc_waveform("arc", "motor", 0.1, 20_000, seed=9)
        b = gen_arc_waveform("arc", "motor", 0.1, 20_000, seed=9)
        np.testing.assert_array_equal(a, b)
        assert not np.array_equal(a, gen_arc_waveform("arc", "motor", 0.1, 20_000, seed=10))

    def test_shoulders_are_flat(self):
        # every shoulder sample sits within epsilon * amplitude of zero
        arc = ArcParams()
        for p in LOAD_PROFILES:
            x, onset = gen_arc_waveform("arc", p, 0.2, 20_000, seed=1, return_onset=True)
            clean = gen_arc_waveform("normal", p, 0.2, 20_000, seed=1)
            flat = (np.abs(x) <= arc.shoulder_epsilon * p.amplitude) & (np.abs(clean) > 0.2 * p.amplitude)
            assert not flat[:onset].any()
        x = gen_arc_waveform("arc", "resistive", 1.0, 20_000, seed=2)
        frac = np.mean(np.abs(x) <= arc.shoulder_epsilon)
        assert 0.04 < frac < 0.2

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2 ** 32 - 1), st.sampled_from([p.name for p in LOAD_PROFILES]))
    def test_bounded(self, seed, profile):
        arc, p = ArcParams(), get_profile(profile)
        x = gen_arc_waveform("arc", p, 0.1, 20_000, seed)
        assert np.abs(x).max() <= p.amplitude * (1 + arc.jitter_max) + 6 * arc.burst_sigma * p.amplitude

    def test_onset_random(self):
        onsets = {gen_arc_waveform("arc", "lamp", 0.2, 10_000, s, return_onset=True)[1] for s in range(10)}
        assert len(onsets) > 5 and max(onsets) < 1000

    def test_bad_inputs(self):
        with pytest.raises(ConfigError):
            gen_arc_waveform("arc", "toaster", 0.1, 10_000, 0)
        with pytest.raises(ConfigError):
            gen_arc_waveform("spark", "lamp", 0.1, 10_000, 0)
        with pytest.raises(ConfigError):
            gen_arc_waveform("normal", "lamp", 0.001, 10_000, 0)


class TestNoise:
    def test_zero_db(self):
        x = np.sin(np.linspace(0, 200 * np.pi, 200_000))
        y = add_noise_snr(x, 0.0, seed=1)
        assert signal_power(y - x) == pytest.approx(signal_power(x), rel=0.02)

    def test_unit_power_ten_db(self):
        x = np.ones(200_000)
        assert np.var(add_noise_snr(x, 10.0, seed=2) - x) == pytest.approx(0.1, rel=0.02)

    @pytest.mark.parametrize("snr", [-9, -5, -3, -1, 1, 3, 5])
    def test_empirical_snr(self, snr):
        x = gen_arc_waveform("arc", "rectifier", 0.5, 20_000, seed=snr + 20)
        assert abs(measured_snr_db(x, add_noise_snr(x, snr, seed=snr + 40)) - snr) <= 0.5

    def test_zero_power(self):
        with pytest.raises(ConfigError):
            add_noise_snr(np.zeros(10), 3.0, 0)


class TestWindowing:
    def test_count(self):
        assert window_and_downsample(np.zeros(1_000_000), 10_000, 5_000).shape == (199, 1, 10_000)

    def test_factor_one_is_identity(self, rng):
        x = rng.standard_normal(50)
        w = window_and_downsample(x, 20, 10)
        np.testing.assert_array_equal(w[1, 0], x[10:30])

    def test_decimation(self):
        w = window_and_downsample(np.arange(20_000.0), 10_000, 5_000, 5)
        assert w.shape == (3, 1, 2000)
        np.testing.assert_array_equal(w[1, 0, :3], [5000, 5005, 5010])

    def test_prefilter_averages_blocks(self):
        w = window_and_downsample(np.arange(8.0), 8, 8, 4, prefilter=True)
        np.testing.assert_array_equal(w[0, 0], [1.5, 5.5])

    def test_window_too_long(self):
        with pytest.raises(ShapeError):
            window_and_downsample(np.zeros(5), 10, 1)

    def test_factor_must_divide(self):
        with pytest.raises(ConfigError):
            window_and_downsample(np.zeros(100), 10, 5, 3)


def labelled(counts, L=4):
    labels = np.concatenate([np.full(n, c) for c, n in enumerate(counts)])
    windows = np.arange(len(labels) * L, dtype=float).reshape(-1, 1, L)
    return SignalDataset(windows, labels, [f"c{i}" for i in range(len(counts))])


class TestSplits:
    def test_balance_to_minimum(self):
        idx = balance(labelled([120, 80]).labels, seed=0)
        assert np.bincount(labelled([120, 80]).labels[idx]).tolist() == [80, 80]

    def test_ratios(self):
        tr, va, te = balance_and_split(labelled([500, 500]), seed=1)
        assert (len(tr), len(va), len(te)) == (800, 100, 100)
        for part in (tr, va, te):
            assert len(set(part.counts())) == 1

    def test_disjoint_and_complete(self):
        ds = labelled([60, 45, 50])
        parts = balance_and_split(ds, seed=3)
        keys = [set(map(float, p.windows[:, 0, 0])) for p in parts]
        assert not (keys[0] & keys[1] or keys[0] & keys[2] or keys[1] & keys[2])
        assert sum(len(k) for k in keys) == 3 * 45

    def test_deterministic(self):
        a = balance_and_split(labelled([30, 30]), seed=5)
        b = balance_and_split(labelled([30, 30]), seed=5)
        for x, y in zip(a, b):
            np.testing.assert_array_equal(x.windows, y.windows)

    def test_too_few(self):
        with pytest.raises(ConfigError, match="c1=5"):
            balance_and_split(labelled([30, 5]))


class TestDatasets:
    def small(self, **kw):
        return make_dataset(num_classes=4, records_per_class=2, duration_s=0.2, sample_rate=20_000, window=1000,
                            step=500, decimate=4, seed=7, **kw)

    def test_balanced_and_labelled(self):
        ds = self.small()
        assert ds.window_len == 250 and ds.channels == 1
        assert len(set(ds.counts())) == 1
        assert ds.class_names == ["resistive-normal", "resistive-arc", "rectifier-normal", "rectifier-arc"]
        assert ds.meta["sampling_time_s"] == pytest.approx(2e-4)

    def test_voltage_channel(self):
        assert self.small(with_voltage=True).channels == 2

    def test_deterministic(self):
        np.testing.assert_array_equal(self.small().windows, self.small().windows)

    def test_class_table(self):
        assert len(class_table(16)) == 16
        with pytest.raises(ConfigError):
            class_table(3)

    def test_binary_round_trip(self, tmp_path):
        ds = self.small(snr_db=-3)
        path = str(tmp_path / "d.arcd")
        ds.save(path)
        back = SignalDataset.load(path)
        np.testing.assert_array_equal(back.windows, ds.windows)
        np.testing.assert_array_equal(back.labels, ds.labels)
        assert back.class_names == ds.class_names
        assert back.to_bytes() == ds.to_bytes()
        again = str(tmp_path / "e.arcd")
        back.save(again)
        assert open(path, "rb").read() == open(again, "rb").read()

    def test_header_layout(self):
        buf = labelled([2, 1], L=3).to_bytes()
        assert buf[:4] == b"ARCD"
        assert int.from_bytes(buf[4:6], "little") == 1
        assert int.from_bytes(buf[6:10], "little") == 3

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.arcd"
        path.write_bytes(b"ARCX" + labelled([2, 2]).to_bytes()[4:])
        with pytest.raises(FormatError):
            SignalDataset.load(str(path))

    def test_truncated(self):
        with pytest.raises(FormatError):
            SignalDataset.from_bytes(labelled([2, 2]).to_bytes()[:-1])

    def test_csv_round_trip(self, tmp_path):
        ds = self.small()
        path = str(tmp_path / "d.csv")
        ds.to_csv(path)
        back = SignalDataset.from_csv(path)
        np.testing.assert_array_equal(back.windows, ds.windows)
        np.testing.assert_array_equal(back.labels, ds.labels)
