"""Branch/trunk network assembly, ablation variants and complexity counting.

Network layout (all convolutions stride 1 with same padding)::

    branch_i(x) = pool(relu(conv2(pool(eas(conv1(x)))) + pool(shortcut(x))))
    trunk(z)    = fc2(relu(fc1(flatten(pool(eas(conv(z)))))))
    logits      = trunk(concat_channels(branch_1(x), ..., branch_p(x)))

Variants:

* ``mfnn``      the network above
* ``relu_m``    every EAS replaced by ReLU
* ``one_trunk`` a single path ``conv -> eas -> pool -> conv -> relu -> pool``
  feeding the same trunk; its width is searched so the parameter count
  stays within 10% of the ``mfnn`` network built from the same config.
"""

from dataclasses import asdict, dataclass, fields, replace
from typing import NamedTuple

import numpy as np

from .errors import ConfigError, ShapeError
from .layers import EAS, AvgPool1D, Concat, Conv1D, Dense, Flatten, ReLU, ResidualAdd, softmax
from .numerics import as_tensor

VARIANTS = ("mfnn", "one_trunk", "relu_m")
PARITY_TOLERANCE = 0.10
BYTES_PER_VALUE = 4


def normalize_variant(name):
    v = name.replace("-", "_").lower()
    if v not in VARIANTS:
        raise ConfigError(f"unknown variant {name!r}; choose from {', '.join(VARIANTS)}")
    return v


@dataclass(frozen=True)
class ModelConfig:
    input_length: int = 1000
    num_branches: int = 3
    branch_filters: int = 6
    kernel: int = 5
    pool: int = 2
    trunk_filters: int = 8
    fc_width: int = 256
    num_classes: int = 16
    in_channels: int = 1
    variant: str = "mfnn"
    seed: int = 0
    # width of the single path of the one_trunk variant; 0 means "search"
    path_filters: int = 0

    def __post_init__(self):
        object.__setattr__(self, "variant", normalize_variant(self.variant))
        counts = ("input_length", "num_branches", "branch_filters", "kernel", "pool",
                  "trunk_filters", "fc_width", "in_channels")
        for name in counts:
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.num_classes < 2:
            raise ConfigError(f"num_classes must be >= 2, got {self.num_classes}")
        if self.kernel % 2 == 0:
            raise ConfigError(f"kernel must be odd so same padding preserves length, got {self.kernel}")
        if self.path_filters < 0:
            raise ConfigError("path_filters must be >= 0")
        if self.front_length < 1:
            raise ConfigError(f"input_length {self.input_length} too short for two pooling stages")
        if self.flatten_width < 1:
            raise ConfigError(f"input_length {self.input_length} leaves an empty trunk after pooling")

    @property
    def front_length(self):
        """Length of each branch (or single path) output."""
        return (self.input_length // self.pool) // self.pool

    @property
    def trunk_length(self):
        return self.front_length // self.pool

    @property
    def flatten_width(self):
        return self.trunk_filters * self.trunk_length

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown ModelConfig fields: {sorted(unknown)}")
        return cls(**d)


def _activation(cfg, channels, rng, name):
    if cfg.variant == "relu_m":
        return ReLU(name=name.replace("eas", "relu"))
    return EAS(channels, rng, name=name)


def _run(layers, x):
    caches = []
    for layer in layers:
        x, c = layer.forward(x)
        caches.append(c)
    return x, caches


def _run_backward(layers, caches, dy):
    for layer, c in zip(reversed(layers), reversed(caches)):
        dy = layer.backward(c, dy)
    return dy


class Branch:
    """Residual branch network producing ``branch_filters`` feature channels."""

    def __init__(self, cfg, rng, name="branch"):
        f, k = cfg.branch_filters, cfg.kernel
        self.name = name
        self.out_channels = f
        self.conv1 = Conv1D(cfg.in_channels, f, k, rng, name=f"{name}.conv1")
        self.act1 = _activation(cfg, f, rng, f"{name}.eas1")
        self.pool1 = AvgPool1D(cfg.pool, name=f"{name}.pool1")
        self.conv2 = Conv1D(f, f, k, rng, name=f"{name}.conv2")
        self.shortcut = Conv1D(cfg.in_channels, f, k, rng, name=f"{name}.shortcut")
        self.pool_shortcut = AvgPool1D(cfg.pool, name=f"{name}.pool_shortcut")
        self.add = ResidualAdd(name=f"{name}.add")
        self.relu = ReLU(name=f"{name}.relu")
        self.pool2 = AvgPool1D(cfg.pool, name=f"{name}.pool2")

    @property
    def layers(self):
        return [self.conv1, self.act1, self.pool1, self.conv2, self.shortcut,
                self.pool_shortcut, self.add, self.relu, self.pool2]

    def forward(self, x):
        main, c_main = _run([self.conv1, self.act1, self.pool1, self.conv2], x)
        short, c_short = _run([self.shortcut, self.pool_shortcut], x)
        s, c_add = self.add.forward(main, short)
        y, c_tail = _run([self.relu, self.pool2], s)
        return y, (c_main, c_short, c_add, c_tail)

    def backward(self, cache, dy):
        c_main, c_short, c_add, c_tail = cache
        ds = _run_backward([self.relu, self.pool2], c_tail, dy)
        d_main, d_short = self.add.backward(c_add, ds)
        dx = _run_backward([self.conv1, self.act1, self.pool1, self.conv2], c_main, d_main)
        return dx + _run_backward([self.shortcut, self.pool_shortcut], c_short, d_short)


class SinglePath:
    """Front end of the one_trunk ablation: one wide path, no residual."""

    def __init__(self, cfg, width, rng, name="path"):
        k = cfg.kernel
        self.name = name
        self.out_channels = width
        self.layers = [
            Conv1D(cfg.in_channels, width, k, rng, name=f"{name}.conv1"),
            EAS(width, rng, name=f"{name}.eas1"),
            AvgPool1D(cfg.pool, name=f"{name}.pool1"),
            Conv1D(width, width, k, rng, name=f"{name}.conv2"),
            ReLU(name=f"{name}.relu"),
            AvgPool1D(cfg.pool, name=f"{name}.pool2"),
        ]

    def forward(self, x):
        return _run(self.layers, x)

    def backward(self, cache, dy):
        return _run_backward(self.layers, cache, dy)


class Trunk:
    def __init__(self, cfg, in_channels, rng, name="trunk"):
        self.name = name
        self.layers = [
            Conv1D(in_channels, cfg.trunk_filters, cfg.kernel, rng, name=f"{name}.conv"),
            _activation(cfg, cfg.trunk_filters, rng, f"{name}.eas"),
            AvgPool1D(cfg.pool, name=f"{name}.pool"),
            Flatten(name=f"{name}.flatten"),
            Dense(cfg.flatten_width, cfg.fc_width, rng, name=f"{name}.fc1"),
            ReLU(name=f"{name}.relu"),
            Dense(cfg.fc_width, cfg.num_classes, rng, name=f"{name}.fc2"),
        ]

    def forward(self, x):
        return _run(self.layers, x)

    def backward(self, cache, dy):
        return _run_backward(self.layers, cache, dy)


class MfnnModel:
    """Parallel front ends, channel concatenation and a shared trunk."""

    def __init__(self, config, branches, trunk):
        self.config = config
        self.branches = list(branches)
        self.trunk = trunk
        self.concat = Concat(name="concat")

    @property
    def layers(self):
        out = []
        for b in self.branches:
            out.extend(b.layers)
        out.append(self.concat)
        out.extend(self.trunk.layers)
        return out

    def named_parameters(self):
        return [(f"{layer.name}.{key}", p) for layer in self.layers for key, p in layer.params.items()]

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def num_params(self):
        return sum(p.size for p in self.parameters())

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    def _check_input(self, x):
        cfg = self.config
        if x.ndim != 3 or x.shape[1:] != (cfg.in_channels, cfg.input_length):
            raise ShapeError("model input", f"[B, {cfg.in_channels}, {cfg.input_length}]", f"shape {x.shape}")

    def forward(self, x):
        x = as_tensor(x)
        self._check_input(x)
        outs, caches = [], []
        for b in self.branches:
            try:
                y, c = b.forward(x)
            except ShapeError as e:
                raise ShapeError(f"{b.name}/{e.where}", e.expected, e.got) from e
            outs.append(y)
            caches.append(c)
        z, c_cat = self.concat.forward(outs)
        logits, c_trunk = self.trunk.forward(z)
        return logits, (caches, c_cat, c_trunk)

    def backward(self, cache, dlogits):
        caches, c_cat, c_trunk = cache
        dz = self.trunk.backward(c_trunk, dlogits)
        parts = self.concat.backward(c_cat, dz)
        dx = None
        for b, c, d in zip(self.branches, caches, parts):
            g = b.backward(c, d)
            dx = g if dx is None else dx + g
        return dx

    def logits(self, x, batch_size=256):
        x = as_tensor(x)
        return np.concatenate([self.forward(x[i:i + batch_size])[0]
                               for i in range(0, len(x), batch_size)], axis=0)

    def predict_proba(self, x, batch_size=256):
        return softmax(self.logits(x, batch_size))

    def branch_outputs(self, x):
        """Per-front-end outputs ``[B, C, front_length]`` for inspection."""
        x = as_tensor(x)
        self._check_input(x)
        return [b.forward(x)[0] for b in self.branches]


def build_mfnn(config):
    rng = np.random.default_rng(config.seed)
    branches = [Branch(config, rng, name=f"branch{i}") for i in range(config.num_branches)]
    trunk = Trunk(config, config.num_branches * config.branch_filters, rng)
    return MfnnModel(config, branches, trunk)


def build_one_trunk(config):
    """Build the single-path ablation, searching its width if not fixed."""
    config = replace(config, variant="one_trunk")
    if config.path_filters == 0:
        config = replace(config, path_filters=search_one_trunk_width(config))
    rng = np.random.default_rng(config.seed)
    path = SinglePath(config, config.path_filters, rng)
    trunk = Trunk(config, config.path_filters, rng)
    return MfnnModel(config, [path], trunk)


def search_one_trunk_width(config, max_width=None):
    target = count_complexity(replace(config, variant="mfnn", path_filters=0)).params
    max_width = max_width or 4 * config.num_branches * config.branch_filters + 64
    best = min(range(1, max_width + 1),
               key=lambda w: abs(count_complexity(replace(config, variant="one_trunk", path_filters=w)).params
                                 - target))
    got = count_complexity(replace(config, variant="one_trunk", path_filters=best)).params
    rel = abs(got - target) / target
    if rel > PARITY_TOLERANCE:
        raise ConfigError(f"no one_trunk width within {PARITY_TOLERANCE:.0%} of {target} parameters; "
                          f"nearest is width {best} with {got} ({rel:.1%} off)")
    return best


def build_model(config):
    if config.variant == "one_trunk":
        return build_one_trunk(config)
    return build_mfnn(config)


class PlanNode(NamedTuple):
    name: str
    kind: str
    inputs: tuple
    channels: int
    length: int
    params: int
    flops: int

    @property
    def elements(self):
        return self.channels * self.length


class Complexity(NamedTuple):
    params: int
    flops: int
    peak_mac_bytes: int
    input_length: int

    def row(self, label="MFNN"):
        return (f"{label} & {self.params / 1e6:.2f}M & {self.flops / 1e6:.2f}M & "
                f"{self.peak_mac_bytes / 2 ** 20:.2f}MB")


def layer_plan(config):
    """Forward graph of one sample as :class:`PlanNode` records, in execution order.

    Counting conventions:

    * conv: ``(Cin*K + 1) * Cout`` parameters, ``2*Cin*K*Cout*Lout + Cout*Lout`` flops
    * dense: ``(F + 1) * G`` parameters, ``2*F*G + G`` flops
    * EAS: ``2*C`` parameters, 3 flops per element (multiply, add, sine)
    * ReLU, residual add: 1 flop per element
    * average pool: one add per pooled input element plus one divide per output
    * concat, flatten: no arithmetic
    """
    cfg = config
    nodes = []

    def add(name, kind, inputs, channels, length, params=0, flops=0):
        nodes.append(PlanNode(name, kind, tuple(inputs), channels, length, params, flops))
        return name

    def conv(name, src, cin, cout, length):
        k = cfg.kernel
        return add(name, "conv1d", [src], cout, length, (cin * k + 1) * cout,
                   2 * cin * k * cout * length + cout * length)

    def act(name, src, channels, length):
        if cfg.variant == "relu_m":
            return add(name.replace("eas", "relu"), "relu", [src], channels, length, 0, channels * length)
        return add(name, "eas", [src], channels, length, 2 * channels, 3 * channels * length)

    def pool(name, src, channels, length):
        lout = length // cfg.pool
        return add(name, "avgpool1d", [src], channels, lout, 0, channels * (lout * cfg.pool + lout))

    L, cin, p = cfg.input_length, cfg.in_channels, cfg.pool
    add("input", "input", [], cin, L)
    fronts = []
    if cfg.variant == "one_trunk":
        w = cfg.path_filters or search_one_trunk_width(cfg)
        h = conv("path.conv1", "input", cin, w, L)
        h = act("path.eas1", h, w, L)
        h = pool("path.pool1", h, w, L)
        h = conv("path.conv2", h, w, w, L // p)
        h = add("path.relu", "relu", [h], w, L // p, 0, w * (L // p))
        fronts.append(pool("path.pool2", h, w, L // p))
        front_channels = w
    else:
        f = cfg.branch_filters
        for i in range(cfg.num_branches):
            n = f"branch{i}"
            h = conv(f"{n}.conv1", "input", cin, f, L)
            h = act(f"{n}.eas1", h, f, L)
            h = pool(f"{n}.pool1", h, f, L)
            h = conv(f"{n}.conv2", h, f, f, L // p)
            s = conv(f"{n}.shortcut", "input", cin, f, L)
            s = pool(f"{n}.pool_shortcut", s, f, L)
            h = add(f"{n}.add", "residual_add", [h, s], f, L // p, 0, f * (L // p))
            h = add(f"{n}.relu", "relu", [h], f, L // p, 0, f * (L // p))
            fronts.append(pool(f"{n}.pool2", h, f, L // p))
        front_channels = cfg.num_branches * f
    Lf = cfg.front_length
    z = add("concat", "concat", fronts, front_channels, Lf)
    tf = cfg.trunk_filters
    h = conv("trunk.conv", z, front_channels, tf, Lf)
    h = act("trunk.eas", h, tf, Lf)
    h = pool("trunk.pool", h, tf, Lf)
    F = cfg.flatten_width
    h = add("trunk.flatten", "flatten", [h], 1, F)
    G = cfg.fc_width
    h = add("trunk.fc1", "dense", [h], 1, G, (F + 1) * G, 2 * F * G + G)
    h = add("trunk.relu", "relu", [h], 1, G, 0, G)
    K = cfg.num_classes
    add("trunk.fc2", "dense", [h], 1, K, (G + 1) * K, 2 * G * K + K)
    return nodes


def peak_activation_elements(nodes):
    """Largest number of simultaneously live activation elements."""
    last_use = {}
    for i, n in enumerate(nodes):
        for src in n.inputs:
            last_use[src] = i
    size = {n.name: n.elements for n in nodes}
    live, peak = 0, 0
    for i, n in enumerate(nodes):
        live += n.elements
        peak = max(peak, live)
        for src in set(n.inputs):
            if last_use[src] == i:
                live -= size[src]
    return peak


def count_complexity(config):
    """Closed-form parameter, flop and peak memory-access counts for one sample."""
    nodes = layer_plan(config)
    params = sum(n.params for n in nodes)
    flops = sum(n.flops for n in nodes)
    peak = (peak_activation_elements(nodes) + params) * BYTES_PER_VALUE
    return Complexity(params, flops, peak, config.input_length)


def sweep_input_length(config, target_params, lengths):
    """Return the length in ``lengths`` whose parameter count is closest to the target."""
    return min(lengths, key=lambda L: abs(count_complexity(replace(config, input_length=L)).params
                                          - target_params))
