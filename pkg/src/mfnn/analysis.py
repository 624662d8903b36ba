"""Interpretability protocols: occlusion maps, branch dumps, DFS decomposition.

Outputs are plain data plus CSV writers; nothing here renders images.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError
from .signals import dfs_forward, dfs_inverse, DfsSpectrum


@dataclass
class OcclusionMap:
    window_starts: np.ndarray
    prob_delta: np.ndarray
    baseline_prob: float
    occl_size: int
    occl_stride: int
    label: int

    @property
    def window_ends(self):
        return self.window_starts + self.occl_size

    def to_csv(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(f"# prob_delta = baseline true-class probability - occluded probability "
                     f"(positive = important); label={self.label} baseline_prob={self.baseline_prob:.8g}\n")
            fh.write("start_index,end_index,prob_delta\n")
            for s, e, d in zip(self.window_starts, self.window_ends, self.prob_delta):
                fh.write(f"{s},{e},{d:.8g}\n")


def occlusion_positions(length, size, stride):
    if size < 1 or stride < 1:
        raise ConfigError("occlusion size and stride must be >= 1")
    if size > length:
        raise ShapeError("occlude", f"size <= window length {length}", f"size {size}")
    return np.arange((length - size) // stride + 1) * stride


def occlude(model, window, label, size=200, stride=100, batch_size=64):
    """Zero each ``size``-sample span in turn and record the true-class probability drop.

    ``window`` is ``[C, L]`` (or ``[L]`` for one channel).  Samples after
    the last full span are never occluded.
    """
    window = np.asarray(window)
    if window.ndim == 1:
        window = window[None, :]
    L = window.shape[-1]
    starts = occlusion_positions(L, size, stride)
    baseline = float(model.predict_proba(window[None])[0, label])
    batch = np.repeat(window[None], len(starts), axis=0)
    for i, s in enumerate(starts):
        batch[i, :, s:s + size] = 0
    probs = model.predict_proba(batch, batch_size)[:, label]
    # delta of a bitwise-unchanged window must be exactly zero
    same = np.all(batch == window[None], axis=(1, 2))
    delta = np.where(same, 0.0, baseline - probs.astype(float))
    return OcclusionMap(starts, delta, baseline, size, stride, int(label))


@dataclass
class ChannelSummary:
    branch: int
    channel: int
    dominant_hz: float
    amplitude: float
    mean: float


@dataclass
class BranchDump:
    traces: list  # per branch: [channels, length]
    dt: float
    summary: list

    def to_csv(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("branch,channel,t,value\n")
            for b, tr in enumerate(self.traces):
                for c, row in enumerate(tr):
                    for i, v in enumerate(row):
                        fh.write(f"{b},{c},{i * self.dt:.10g},{float(v):.8g}\n")

    def summary_csv(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("branch,channel,dominant_hz,amplitude,mean\n")
            for s in self.summary:
                fh.write(f"{s.branch},{s.channel},{s.dominant_hz:.8g},{s.amplitude:.8g},{s.mean:.8g}\n")


def dominant_frequency(trace, dt):
    """Largest non-DC DFS bin as ``(freq_hz, amplitude)``; ``(0, 0)`` if none exists."""
    trace = np.asarray(trace, dtype=float)
    n = trace.size
    if n < 2:
        return 0.0, 0.0
    X = dfs_forward(trace, dt).coefficients
    mags = np.abs(X[1:n // 2 + 1])
    k = int(np.argmax(mags)) + 1
    amp = mags[k - 1] / n * (1 if 2 * k == n else 2)
    return k / (n * dt), float(amp)


def dump_branches(model, window, dt=1.0):
    """Per-branch outputs for one ``[C, L]`` window plus per-channel spectra.

    ``dt`` is the input sampling interval; each branch output is pooled
    twice, so its trace interval is ``dt * pool**2``.
    """
    window = np.asarray(window)
    if window.ndim == 1:
        window = window[None, :]
    outs = [o[0] for o in model.branch_outputs(window[None])]
    out_dt = dt * model.config.pool ** 2
    summary = []
    for b, tr in enumerate(outs):
        for c, row in enumerate(tr):
            hz, amp = dominant_frequency(row, out_dt)
            summary.append(ChannelSummary(b, c, hz, amp, float(np.mean(row))))
    return BranchDump(outs, out_dt, summary)


@dataclass
class Component:
    rank: int
    bin: int
    freq_hz: float
    amplitude: float
    phase_rad: float
    signal: np.ndarray


@dataclass
class Decomposition:
    components: list
    residual: np.ndarray
    dt: float

    def reconstruct(self):
        return sum((c.signal for c in self.components), np.zeros_like(self.residual)) + self.residual

    def to_csv(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("rank,freq_hz,amplitude,phase_rad\n")
            for c in self.components:
                fh.write(f"{c.rank},{c.freq_hz:.10g},{c.amplitude:.10g},{c.phase_rad:.10g}\n")


def decompose_signal(x, dt=1.0, top_k=5):
    """Split ``x`` into its ``top_k`` strongest harmonics and a residual.

    Bins ``k`` and ``N-k`` are merged into one real component
    ``amplitude * cos(2 pi f t + phase)`` with amplitude ``2|X_k|/N``
    (``|X_k|/N`` for the DC and Nyquist bins).
    """
    x = np.asarray(x, dtype=float)
    n = x.size
    if n < 2:
        raise ShapeError("decompose_signal", "at least 2 samples", f"{n}")
    if top_k < 0 or top_k > n // 2:
        raise ConfigError(f"top_k must lie in [0, {n // 2}], got {top_k}")
    spec = dfs_forward(x, dt)
    X = spec.coefficients
    half = np.arange(n // 2 + 1)
    single = (half == 0) | (2 * half == n)
    amps = np.abs(X[half]) / n * np.where(single, 1, 2)
    order = sorted(half, key=lambda k: (-amps[k], k))[:top_k]
    comps = []
    used = np.zeros(n, dtype=bool)
    for rank, k in enumerate(order):
        mask = np.zeros(n, dtype=complex)
        mask[k] = X[k]
        mask[(-k) % n] = X[(-k) % n]
        used[[k, (-k) % n]] = True
        sig = dfs_inverse(DfsSpectrum(mask, dt))
        comps.append(Component(rank, int(k), k / (n * dt), float(amps[k]), float(np.angle(X[k])), sig))
    rest = np.where(used, 0, X)
    residual = dfs_inverse(DfsSpectrum(rest, dt))
    return Decomposition(comps, residual, dt)
