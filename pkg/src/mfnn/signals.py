"""Signal analysis and the synthetic arc-fault data pipeline.

DFS convention (no ``dt`` scaling)::

    X_k = sum_i x_i exp(-j 2 pi k i / N)
    x_i = (1/N) sum_k X_k exp(+j 2 pi k i / N)
"""

import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, FormatError, ShapeError

MAINS_HZ = 50.0


# ----------------------------------------------------------------------------
# Discrete Fourier series


@dataclass
class DfsSpectrum:
    coefficients: np.ndarray
    dt: float = 1.0

    @property
    def n(self):
        return self.coefficients.shape[0]

    @property
    def frequencies(self):
        """Bin frequencies ``k / (N dt)`` in Hz for ``k = 0..N-1``."""
        return np.arange(self.n) / (self.n * self.dt)

    def is_conjugate_symmetric(self, tol=1e-9):
        X = self.coefficients
        mirror = np.conj(X[(-np.arange(self.n)) % self.n])
        scale = max(1.0, float(np.abs(X).max(initial=0.0)))
        return bool(np.all(np.abs(X - mirror) <= tol * scale))


def _unit_roots(n, sign):
    """``exp(sign * 2j pi m / n)`` for ``m = 0..n-1`` with exact quarter turns."""
    m = np.arange(n)
    roots = np.exp(sign * 2j * np.pi * m / n)
    quarter = (4 * m) % n == 0
    roots[quarter] = (1j * sign) ** (4 * m[quarter] // n)
    return roots


def _phase_matrix(n, sign):
    # reducing k*i modulo n keeps every phase on the exact root table
    ki = np.outer(np.arange(n), np.arange(n)) % n
    return _unit_roots(n, sign)[ki]


def dfs_direct(x):
    """Direct O(N^2) evaluation of the forward DFS."""
    x = np.asarray(x)
    if x.ndim != 1 or x.size < 1:
        raise ShapeError("dfs", "non-empty 1-D signal", f"shape {x.shape}")
    return _phase_matrix(x.size, -1) @ x.astype(complex)


def dfs_forward(x, dt=1.0, method="fft"):
    """Forward DFS; ``method="direct"`` uses the O(N^2) reference sum."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or x.size < 1:
        raise ShapeError("dfs_forward", "non-empty 1-D signal", f"shape {x.shape}")
    if method == "direct":
        X = dfs_direct(x)
    elif method == "fft":
        X = np.fft.fft(x)
    else:
        raise ConfigError(f"unknown DFS method {method!r}")
    return DfsSpectrum(X, float(dt))


def dfs_inverse(spec, real=True, method="fft", tol=1e-9):
    X = np.asarray(spec.coefficients, dtype=complex)
    n = X.shape[0]
    if real and not spec.is_conjugate_symmetric(tol):
        raise ConfigError("spectrum is not conjugate-symmetric; a real signal cannot be produced")
    if method == "direct":
        x = (_phase_matrix(n, +1) @ X) / n
    elif method == "fft":
        x = np.fft.ifft(X)
    else:
        raise ConfigError(f"unknown DFS method {method!r}")
    return x.real.copy() if real else x


# ----------------------------------------------------------------------------
# Synthetic waveforms


@dataclass(frozen=True)
class LoadProfile:
    """Steady-state current signature of one appliance.

    ``harmonics`` holds ``(order, relative_amplitude, phase_rad)`` triples.
    The waveform is normalised by ``1 + sum(relative_amplitude)`` so its
    peak never exceeds ``amplitude``.
    """

    name: str
    amplitude: float
    lag: float = 0.0
    harmonics: tuple = ()

    def __post_init__(self):
        if not self.amplitude > 0:
            raise ConfigError(f"load profile {self.name!r}: amplitude must be positive")
        for h in self.harmonics:
            if len(h) != 3 or h[0] < 2 or h[1] < 0:
                raise ConfigError(f"load profile {self.name!r}: bad harmonic {h!r}")


LOAD_PROFILES = (
    LoadProfile("resistive", 1.0),
    LoadProfile("rectifier", 0.6, 0.1, ((3, 0.7, 0.0), (5, 0.45, 0.0), (7, 0.25, 0.0), (9, 0.1, 0.0))),
    LoadProfile("motor", 1.2, 0.6, ((3, 0.06, 0.3),)),
    LoadProfile("lamp", 0.5, 0.0, ((3, 0.02, 0.0),)),
    LoadProfile("universal-motor", 0.8, 0.3, ((3, 0.15, 0.5), (5, 0.08, 1.0))),
    LoadProfile("compressor", 1.4, 0.8, ((3, 0.04, 0.0), (5, 0.02, 0.0))),
    LoadProfile("microwave", 0.7, 0.2, ((2, 0.12, 0.0), (3, 0.22, 0.4))),
    LoadProfile("dimmer", 0.45, 0.4, ((3, 0.35, 1.2), (5, 0.2, 2.0), (7, 0.1, 2.5))),
)


@dataclass(frozen=True)
class ArcParams:
    shoulder_frac: tuple = (0.08, 0.15)
    shoulder_epsilon: float = 0.02
    jitter_max: float = 0.1
    attenuation: float = 0.95
    burst_sigma: float = 0.08
    burst_s: float = 4e-4
    onset_max_frac: float = 0.5


def get_profile(profile):
    if isinstance(profile, LoadProfile):
        return profile
    for p in LOAD_PROFILES:
        if p.name == profile:
            return p
    raise ConfigError(f"unknown load profile {profile!r}; known: {[p.name for p in LOAD_PROFILES]}")


def _clean_current(t, profile, phase0):
    w = 2 * np.pi * MAINS_HZ
    theta = phase0 - profile.lag
    y = np.sin(w * t + theta)
    for order, rel, ph in profile.harmonics:
        y = y + rel * np.sin(order * (w * t + theta) + ph)
    return profile.amplitude * y / (1 + sum(h[1] for h in profile.harmonics))


def gen_arc_waveform(kind, load_profile, duration_s, sample_rate, seed, arc=ArcParams(),
                     return_onset=False):
    """Synthesize a current record for one appliance.

    ``kind="arc"`` adds, after a random onset: flat shoulders around every
    current zero crossing, per-half-cycle amplitude jitter and attenuation,
    and decaying wideband bursts at each re-ignition point.
    With ``return_onset`` the onset sample index is returned as well
    (0 for ``kind="normal"``).
    """
    if kind not in ("normal", "arc"):
        raise ConfigError(f"kind must be 'normal' or 'arc', got {kind!r}")
    profile = get_profile(load_profile)
    n = int(round(duration_s * sample_rate))
    if n < sample_rate / MAINS_HZ:
        raise ConfigError(f"record of {n} samples is shorter than one mains cycle")
    rng = np.random.default_rng(seed)
    phase0 = rng.uniform(0, 2 * np.pi)
    t = np.arange(n) / sample_rate
    x = _clean_current(t, profile, phase0)
    if kind == "normal":
        return (x, 0) if return_onset else x

    onset = int(rng.uniform(0, arc.onset_max_frac) * n)
    w = 2 * np.pi * MAINS_HZ
    half = 1 / (2 * MAINS_HZ)
    theta = phase0 - profile.lag
    # crossings t_m = (m*pi - theta) / w covering the record
    m0 = math.floor(theta / np.pi)
    m1 = math.ceil((w * t[-1] + theta) / np.pi) + 1
    gain = np.ones(n)
    burst = np.zeros(n)
    shoulder = np.zeros(n, dtype=bool)
    burst_len = max(1, int(arc.burst_s * sample_rate))
    envelope = np.exp(-np.arange(burst_len) / (burst_len / 3))
    for m in range(m0, m1):
        tc = (m * np.pi - theta) / w
        if tc + half < t[onset]:
            continue
        # half-cycle following this crossing
        lo, hi = np.searchsorted(t, [max(tc, t[onset]), tc + half])
        gain[lo:hi] = arc.attenuation * (1 + rng.uniform(-arc.jitter_max, arc.jitter_max))
        width = rng.uniform(*arc.shoulder_frac) * half
        s_lo, s_hi = np.searchsorted(t, [tc - 0.3 * width, tc + 0.7 * width])
        s_lo = max(s_lo, onset)
        if s_hi <= s_lo:
            continue
        shoulder[s_lo:s_hi] = True
        b_hi = min(n, s_hi + burst_len)
        noise = np.clip(rng.standard_normal(b_hi - s_hi), -6, 6)
        burst[s_hi:b_hi] += arc.burst_sigma * profile.amplitude * noise * envelope[:b_hi - s_hi]
    gain[:onset] = 1.0
    x = x * gain
    x[shoulder] *= arc.shoulder_epsilon
    x = x + burst
    x[shoulder] = np.clip(x[shoulder], -arc.shoulder_epsilon * profile.amplitude,
                          arc.shoulder_epsilon * profile.amplitude)
    return (x, onset) if return_onset else x


def gen_voltage(duration_s, sample_rate, seed, amplitude=1.0):
    """Supply voltage with the same start phase as :func:`gen_arc_waveform`."""
    rng = np.random.default_rng(seed)
    phase0 = rng.uniform(0, 2 * np.pi)
    t = np.arange(int(round(duration_s * sample_rate))) / sample_rate
    return amplitude * np.sin(2 * np.pi * MAINS_HZ * t + phase0)


def signal_power(x):
    return float(np.mean(np.square(x)))


def measured_snr_db(clean, noisy):
    return 10 * np.log10(signal_power(clean) / signal_power(np.asarray(noisy) - clean))


def add_noise_snr(x, snr_db, seed):
    """Add white Gaussian noise at ``snr_db`` relative to the power of ``x``."""
    x = np.asarray(x, dtype=float)
    p = signal_power(x)
    if not p > 0:
        raise ConfigError("cannot set an SNR for a zero-power signal")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    sigma = np.sqrt(p / 10 ** (snr_db / 10))
    return x + sigma * rng.standard_normal(x.shape)


def window_and_downsample(x, window, step, factor=1, prefilter=False):
    """Slice ``x`` (``[n]`` or ``[C, n]``) into windows and decimate.

    Returns ``[n_windows, C, window // factor]``.  With ``prefilter`` each
    retained sample is the mean of its ``factor``-sample block instead of
    the block's first sample.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2:
        raise ShapeError("window_and_downsample", "[n] or [C, n] signal", f"shape {x.shape}")
    if window < 1 or step < 1 or factor < 1:
        raise ConfigError("window, step and factor must be >= 1")
    if window % factor:
        raise ConfigError(f"decimation factor {factor} must divide window {window}")
    length = x.shape[1]
    if window > length:
        raise ShapeError("window_and_downsample", f"at least {window} samples", f"{length}")
    count = (length - window) // step + 1
    starts = np.arange(count) * step
    idx = starts[:, None] + np.arange(window)[None, :]
    win = x[:, idx].transpose(1, 0, 2)  # [count, C, window]
    if factor == 1:
        return win
    if prefilter:
        return win.reshape(count, x.shape[0], window // factor, factor).mean(axis=3)
    return np.ascontiguousarray(win[:, :, ::factor])


# ----------------------------------------------------------------------------
# Datasets


@dataclass
class SignalDataset:
    windows: np.ndarray
    labels: np.ndarray
    class_names: list
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.windows = np.asarray(self.windows, dtype=np.float32)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.windows.ndim != 3:
            raise ShapeError("SignalDataset", "windows [n, C, L]", f"shape {self.windows.shape}")
        if self.labels.shape != (self.windows.shape[0],):
            raise ShapeError("SignalDataset", f"labels ({self.windows.shape[0]},)", f"{self.labels.shape}")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= len(self.class_names)):
            raise ConfigError("labels out of range of class_names")

    def __len__(self):
        return self.labels.shape[0]

    @property
    def channels(self):
        return self.windows.shape[1]

    @property
    def window_len(self):
        return self.windows.shape[2]

    def counts(self):
        return np.bincount(self.labels, minlength=len(self.class_names))

    def subset(self, idx):
        return SignalDataset(self.windows[idx], self.labels[idx], list(self.class_names), dict(self.meta))

    # -- ARCD binary container ------------------------------------------------

    def to_bytes(self):
        n, C, L = self.windows.shape
        parts = [ARCD_MAGIC, struct.pack("<HIHIH", ARCD_VERSION, n, C, L, len(self.class_names))]
        for name in self.class_names:
            raw = name.encode("utf-8")
            parts.append(struct.pack("<H", len(raw)) + raw)
        parts.append(self.labels.astype("<u2").tobytes())
        parts.append(np.ascontiguousarray(self.windows, dtype="<f4").tobytes())
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, buf, path="<bytes>"):
        if buf[:4] != ARCD_MAGIC:
            raise FormatError(f"{path}: not an ARCD dataset (bad magic)")
        head = struct.calcsize("<HIHIH")
        if len(buf) < 4 + head:
            raise FormatError(f"{path}: truncated header")
        version, n, C, L, K = struct.unpack_from("<HIHIH", buf, 4)
        if version != ARCD_VERSION:
            raise FormatError(f"{path}: unsupported ARCD version {version}")
        pos = 4 + head
        names = []
        for _ in range(K):
            if pos + 2 > len(buf):
                raise FormatError(f"{path}: truncated class table")
            (ln,) = struct.unpack_from("<H", buf, pos)
            names.append(buf[pos + 2:pos + 2 + ln].decode("utf-8"))
            pos += 2 + ln
        expected = pos + 2 * n + 4 * n * C * L
        if len(buf) != expected:
            raise FormatError(f"{path}: size {len(buf)} bytes, header implies {expected}")
        labels = np.frombuffer(buf, dtype="<u2", count=n, offset=pos).astype(np.int64)
        pos += 2 * n
        windows = np.frombuffer(buf, dtype="<f4", count=n * C * L, offset=pos).reshape(n, C, L)
        try:
            return cls(windows.astype(np.float32), labels, names)
        except ConfigError as e:
            raise FormatError(f"{path}: {e}") from e

    def save(self, path):
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())
        if self.meta:
            with open(f"{path}.meta", "w", encoding="utf-8") as fh:
                fh.writelines(f"{k}={v}\n" for k, v in sorted(self.meta.items()))
        return path

    @classmethod
    def load(cls, path):
        with open(path, "rb") as fh:
            ds = cls.from_bytes(fh.read(), path)
        try:
            with open(f"{path}.meta", encoding="utf-8") as fh:
                ds.meta = dict(line.rstrip("\n").split("=", 1) for line in fh if "=" in line)
        except FileNotFoundError:
            pass
        return ds

    # -- CSV interchange ------------------------------------------------------

    def to_csv(self, path):
        """One window per row: class name, then channel-major samples."""
        C, L = self.channels, self.window_len
        header = ["label"] + [f"c{c}_s{i}" for c in range(C) for i in range(L)]
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(",".join(header) + "\n")
            for w, y in zip(self.windows, self.labels):
                fh.write(self.class_names[y] + "," + ",".join(repr(float(v)) for v in w.ravel()) + "\n")

    @classmethod
    def from_csv(cls, path, class_names=None):
        with open(path, encoding="utf-8") as fh:
            header = fh.readline().rstrip("\n").split(",")
            rows = [line.rstrip("\n").split(",") for line in fh if line.strip()]
        cols = header[1:]
        C = len({c.split("_")[0] for c in cols}) if cols and cols[0].startswith("c") else 1
        L = len(cols) // C
        names = list(class_names) if class_names else list(dict.fromkeys(r[0] for r in rows))
        lookup = {n: i for i, n in enumerate(names)}
        try:
            labels = [lookup[r[0]] for r in rows]
        except KeyError as e:
            raise FormatError(f"{path}: unknown class {e.args[0]!r}") from e
        windows = np.array([[float(v) for v in r[1:]] for r in rows], dtype=np.float32)
        return cls(windows.reshape(len(rows), C, L), labels, names)


ARCD_MAGIC = b"ARCD"
ARCD_VERSION = 1


def class_table(num_classes):
    """Class names: appliances in profile order, each as ``-normal`` then ``-arc``."""
    if num_classes < 2 or num_classes > 2 * len(LOAD_PROFILES) or num_classes % 2:
        raise ConfigError(f"num_classes must be an even number in [2, {2 * len(LOAD_PROFILES)}]")
    return [(p, kind) for p in LOAD_PROFILES[:num_classes // 2] for kind in ("normal", "arc")]


def balance(labels, seed, num_classes=None):
    """Indices keeping ``min(count)`` windows of every class (seeded subsample)."""
    labels = np.asarray(labels)
    K = num_classes or int(labels.max()) + 1
    counts = np.bincount(labels, minlength=K)
    keep = counts.min()
    rng = np.random.default_rng(seed)
    chosen = [np.sort(rng.choice(np.flatnonzero(labels == c), size=keep, replace=False)) for c in range(K)]
    return np.sort(np.concatenate(chosen))


def balance_and_split(dataset, ratios=(0.8, 0.1, 0.1), seed=0, min_per_class=10):
    """Balance classes, then split each class ``floor(r0 n) / floor(r1 n) / rest``."""
    if len(ratios) != 3 or any(r < 0 for r in ratios) or abs(sum(ratios) - 1) > 1e-9:
        raise ConfigError(f"ratios must be three non-negative numbers summing to 1, got {ratios}")
    K = len(dataset.class_names)
    counts = dataset.counts()
    if counts.min() < min_per_class:
        listing = ", ".join(f"{n}={c}" for n, c in zip(dataset.class_names, counts))
        raise ConfigError(f"every class needs >= {min_per_class} windows; counts: {listing}")
    rng = np.random.default_rng(seed)
    keep = int(counts.min())
    n_train = int(math.floor(ratios[0] * keep + 1e-9))
    n_val = int(math.floor(ratios[1] * keep + 1e-9))
    parts = ([], [], [])
    for c in range(K):
        members = rng.permutation(np.flatnonzero(dataset.labels == c))[:keep]
        parts[0].append(members[:n_train])
        parts[1].append(members[n_train:n_train + n_val])
        parts[2].append(members[n_train + n_val:])
    out = []
    for p in parts:
        idx = np.concatenate(p)
        out.append(dataset.subset(idx[rng.permutation(idx.size)]))
    return tuple(out)


def make_dataset(num_classes=4, records_per_class=10, duration_s=1.0, sample_rate=200_000,
                 window=10_000, step=5_000, decimate=10, snr_db=None, seed=0, with_voltage=False,
                 prefilter=False, arc=ArcParams()):
    """Generate, window and balance a labelled synthetic dataset.

    Arc records contribute only windows that start after the fault onset.
    Noise, when requested, is added per record against that record's clean
    power before windowing.
    """
    classes = class_table(num_classes)
    root = np.random.SeedSequence(seed)
    streams = root.spawn(len(classes) * records_per_class)
    windows, labels = [], []
    for c, (profile, kind) in enumerate(classes):
        for r in range(records_per_class):
            ss = streams[c * records_per_class + r]
            wave_seed, noise_seed, volt_noise_seed = ss.generate_state(3)
            x, onset = gen_arc_waveform(kind, profile, duration_s, sample_rate, int(wave_seed), arc,
                                        return_onset=True)
            if snr_db is not None:
                x = add_noise_snr(x, snr_db, int(noise_seed))
            rec = x[None, :]
            if with_voltage:
                v = gen_voltage(duration_s, sample_rate, int(wave_seed))
                if snr_db is not None:
                    v = add_noise_snr(v, snr_db, int(volt_noise_seed))
                rec = np.stack([x, v])
            rec = rec[:, onset:]
            if rec.shape[1] < window:
                continue
            w = window_and_downsample(rec, window, step, decimate, prefilter)
            windows.append(w)
            labels.append(np.full(len(w), c))
    windows = np.concatenate(windows)
    labels = np.concatenate(labels)
    keep = balance(labels, seed, len(classes))
    meta = {
        "sampling_time_s": decimate / sample_rate,
        "snr_db": "none" if snr_db is None else snr_db,
        "sample_rate": sample_rate,
        "duration_s": duration_s,
        "records_per_class": records_per_class,
        "window": window,
        "step": step,
        "decimate": decimate,
        "prefilter": prefilter,
        "seed": seed,
    }
    names = [f"{p.name}-{kind}" for p, kind in classes]
    return SignalDataset(windows[keep], labels[keep], names, meta)
