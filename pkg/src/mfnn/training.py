"""Adam, step-decay schedule, training loop and evaluation."""

import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .errors import ConfigError, NumericError
from .layers import softmax_xent
from .model import build_model
from .numerics import as_tensor


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 32
    epochs: int = 100
    lr0: float = 0.001
    decay_factor: float = 0.5
    decay_every: int = 30
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    num_runs: int = 5

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if not 0 < self.decay_factor <= 1:
            raise ConfigError("decay_factor must lie in (0, 1]")
        if self.epochs < 0 or self.decay_every < 1 or self.num_runs < 1:
            raise ConfigError("epochs >= 0, decay_every >= 1 and num_runs >= 1 are required")


def lr_at(epoch, cfg):
    return cfg.lr0 * cfg.decay_factor ** (epoch // cfg.decay_every)


class Adam:
    """Adam with bias correction over a list of named parameters.

    Parameters carrying a ``project`` hook (EAS frequency and phase) are
    projected back onto their feasible set after each update.
    """

    def __init__(self, named_params, beta1=0.9, beta2=0.999, eps=1e-8):
        self.named = list(named_params)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = [np.zeros_like(p.value) for _, p in self.named]
        self.v = [np.zeros_like(p.value) for _, p in self.named]

    @classmethod
    def from_config(cls, named_params, cfg):
        return cls(named_params, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)

    def step(self, lr):
        for name, p in self.named:
            if not np.all(np.isfinite(p.grad)):
                raise NumericError(f"non-finite gradient in {name}")
        self.t += 1
        c1 = 1 - self.beta1 ** self.t
        c2 = 1 - self.beta2 ** self.t
        for (_, p), m, v in zip(self.named, self.m, self.v):
            g = p.grad
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            p.value -= (lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.value.dtype, copy=False)
            if p.project is not None:
                p.project(p.value)


@dataclass
class EpochRecord:
    epoch: int
    lr: float
    train_loss: float
    val_acc: float
    seconds: float


@dataclass
class RunReport:
    seed: int
    variant: str
    class_names: list
    epochs: list = field(default_factory=list)
    best_epoch: int = -1
    best_val_acc: float = 0.0
    test_acc: float = 0.0
    test_confusion: np.ndarray = None
    test_acc_last: float = 0.0
    test_confusion_last: np.ndarray = None

    @property
    def losses(self):
        return [e.train_loss for e in self.epochs]

    def deterministic_view(self):
        """Everything except wall-clock timings, for reproducibility checks."""
        d = asdict(self)
        for e in d["epochs"]:
            e.pop("seconds")
        d["test_confusion"] = self.test_confusion.tolist()
        d["test_confusion_last"] = self.test_confusion_last.tolist()
        return d

    def to_text(self):
        lines = [
            f"seed={self.seed}",
            f"variant={self.variant}",
            f"epochs={len(self.epochs)}",
            f"best_epoch={self.best_epoch}",
            f"best_val_acc={self.best_val_acc:.6f}",
            f"test_acc={self.test_acc:.6f}",
            f"test_acc_last={self.test_acc_last:.6f}",
            f"final_train_loss={self.losses[-1]:.8g}" if self.epochs else "final_train_loss=nan",
            f"seconds_total={sum(e.seconds for e in self.epochs):.3f}",
            "classes=" + ",".join(self.class_names),
            "confusion=" + ";".join(",".join(str(int(v)) for v in row) for row in self.test_confusion),
            "confusion_last=" + ";".join(",".join(str(int(v)) for v in row)
                                         for row in self.test_confusion_last),
        ]
        return "\n".join(lines) + "\n"

    def curves_csv(self):
        rows = ["epoch,lr,train_loss,val_acc"]
        rows += [f"{e.epoch},{e.lr:.10g},{e.train_loss:.10g},{e.val_acc:.6f}" for e in self.epochs]
        return "\n".join(rows) + "\n"


def evaluate(model, windows, labels, batch_size=256):
    """Return ``(accuracy, confusion)``; rows are true classes, columns predictions.

    ``argmax`` breaks ties toward the lowest class index.
    """
    K = model.config.num_classes
    labels = np.asarray(labels, dtype=np.int64)
    confusion = np.zeros((K, K), dtype=np.int64)
    if len(labels) == 0:
        return 0.0, confusion
    pred = np.argmax(model.logits(windows, batch_size), axis=1)
    np.add.at(confusion, (labels, pred), 1)
    return float(np.trace(confusion) / len(labels)), confusion


def _snapshot(model):
    return [p.value.copy() for p in model.parameters()]


def _restore(model, snap):
    for p, v in zip(model.parameters(), snap):
        p.value[...] = v


def train(model, train_set, val_set, test_set, cfg, log=None):
    """Train ``model`` in place and return a :class:`RunReport`.

    The weights left in ``model`` afterwards are the best-validation ones.
    """
    for name, ds in (("train", train_set), ("validation", val_set), ("test", test_set)):
        if len(ds.labels) == 0:
            raise ConfigError(f"{name} split is empty")
    rng = np.random.default_rng(cfg.seed)
    opt = Adam.from_config(model.named_parameters(), cfg)
    x_train = as_tensor(train_set.windows)
    y_train = np.asarray(train_set.labels, dtype=np.int64)
    n = len(y_train)
    report = RunReport(seed=cfg.seed, variant=model.config.variant, class_names=list(train_set.class_names))
    best = None
    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        lr = lr_at(epoch, cfg)
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            model.zero_grad()
            logits, cache = model.forward(x_train[idx])
            loss, grad, _ = softmax_xent(logits, y_train[idx])
            if not np.isfinite(loss):
                raise NumericError(f"non-finite loss at epoch {epoch}, batch starting {start} "
                                   f"(lr={lr:g}, max |logit|={np.abs(logits).max():g})")
            model.backward(cache, grad.astype(logits.dtype, copy=False))
            opt.step(lr)
            total += loss * len(idx)
        val_acc, _ = evaluate(model, val_set.windows, val_set.labels)
        if best is None or val_acc > best[1]:
            best = (epoch, val_acc, _snapshot(model))
        rec = EpochRecord(epoch, lr, total / n, val_acc, time.perf_counter() - t0)
        report.epochs.append(rec)
        if log is not None:
            log(rec)
    report.test_acc_last, report.test_confusion_last = evaluate(model, test_set.windows, test_set.labels)
    if best is not None:
        report.best_epoch, report.best_val_acc = best[0], best[1]
        _restore(model, best[2])
    report.test_acc, report.test_confusion = evaluate(model, test_set.windows, test_set.labels)
    return report


def train_runs(model_config, splits, cfg, log=None):
    """Train ``cfg.num_runs`` independent models with seeds ``cfg.seed + r``.

    Returns ``(models, reports)``.
    """
    models, reports = [], []
    for r in range(cfg.num_runs):
        seed = cfg.seed + r
        model = build_model(replace(model_config, seed=seed))
        reports.append(train(model, *splits, replace(cfg, seed=seed), log=log))
        models.append(model)
    return models, reports


def summarize_runs(reports):
    acc = np.array([r.test_acc for r in reports])
    last = np.array([r.test_acc_last for r in reports])
    return {
        "runs": len(reports),
        "seeds": ",".join(str(r.seed) for r in reports),
        "mean_test_acc": float(acc.mean()),
        "std_test_acc": float(acc.std()),
        "mean_test_acc_last": float(last.mean()),
    }
