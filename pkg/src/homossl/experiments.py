"""Training loops, linear probe, baselines, the non-equivariant control and sweeps.

A run is fully described by an :class:`ExperimentConfig`. Its canonical JSON
(sorted keys, no whitespace, output directory excluded) is hashed and the
hash names the run directory ``<out>/run-<hash>/``, which holds::

    config.json     canonical config
    metrics.csv     run_hash,epoch,loss_value,probe_accuracy,equivariance_error,wall_seconds
    steps.csv       per-step training loss
    manifest.json   checkpoint manifest; tensors live in blobs/*.bin

Wall-clock time is only written when ``record_time`` is set, so that repeated
runs produce byte-identical metrics files.
"""
from __future__ import annotations

import contextlib
import csv
import dataclasses
import hashlib
import json
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields

import numpy as np

from . import autodiff as ad
from .dataio import Dataset, load_mnist_desk, synth_dataset
from .losses import (
    LossConfig,
    assl_loss,
    build_head,
    fsim_loss,
    hssl_loss,
    supervised_loss,
    write_trace,
)
from .nets import (
    FAMILIES,
    backbone_forward,
    build_backbone,
    build_dense_backbone,
    equivariance_error,
    make_family,
)
from .sampling import (
    InfeasibleSampleError,
    SamplePlan,
    SeededRng,
    sample_views,
    write_sample_log,
)

log = logging.getLogger(__name__)

LOSSES = ("assl", "hssl", "fsim", "supervised", "none-frozen")
METRIC_COLUMNS = ["run_hash", "epoch", "loss_value", "probe_accuracy",
                  "equivariance_error", "wall_seconds"]
SWEEP_COLUMNS = ["setting", "accuracy", "pct_change_vs_first"]
SEEDS = (1, 2, 3)
# small translation task used by the base-size and distance sweeps; |G| = 16
SWEEP_OVERRIDES = {
    "backbone": {"family": "translation", "grid": 4, "lift_kernel_size": 4, "kernel_size": None},
    "data": {"period": None, "noise": 0.2},
}


class ConfigError(ValueError):
    pass


class TrainingDivergedError(RuntimeError):
    def __init__(self, message, dump_dir=None):
        super().__init__(message)
        self.dump_dir = dump_dir


# --- configuration ---------------------------------------------------------------------

@dataclass(frozen=True)
class DataSpec:
    kind: str = "synthetic"          # or "mnist"
    num_per_class: int = 256         # synthetic training examples per class
    test_per_class: int = 256
    noise: float = 0.5
    period: int | None = 5
    path: str | None = None          # directory with the MNIST IDX files
    n_train: int = 2048
    n_test: int = 1024


@dataclass(frozen=True)
class BackboneSpec:
    family: str = "c4"
    grid: int = 10
    num_scales: int = 6
    channels: tuple = (8, 8, 8)
    kernel_size: int | None = 3
    lift_kernel_size: int | None = 10
    equivariant: bool = True
    hidden: tuple = (64,)            # dense control only
    padding: str = "circular"


@dataclass(frozen=True)
class HeadSpec:
    hidden: int = 32
    out: int = 16


@dataclass(frozen=True)
class OptimSpec:
    lr: float = 0.002
    momentum: float = 0.9
    epochs: int = 30
    batch_size: int = 64
    supervised_lr: float | None = 0.01     # None: use ``lr`` for every objective

    def lr_for(self, loss: str) -> float:
        if loss == "supervised" and self.supervised_lr is not None:
            return self.supervised_lr
        return self.lr


@dataclass(frozen=True)
class ProbeSpec:
    max_iter: int = 2000
    tol: float = 1e-6


@dataclass(frozen=True)
class ExperimentConfig:
    data: DataSpec = DataSpec()
    backbone: BackboneSpec = BackboneSpec()
    head: HeadSpec = HeadSpec()
    loss: str = "hssl"
    temperature: float = 0.1
    sample: SamplePlan = SamplePlan()
    optim: OptimSpec = OptimSpec()
    probe: ProbeSpec = ProbeSpec()
    seed: int = 1
    precision: str = "f32"
    eval_every: int = 10
    matched_samples: bool = True
    log_samples: bool = False
    record_time: bool = False
    out: str = "runs"

    def __post_init__(self):
        if self.loss not in LOSSES:
            raise ConfigError(f"loss must be one of {LOSSES}, got {self.loss!r}")
        if self.precision not in ("f32", "f64"):
            raise ConfigError(f"precision must be f32 or f64, got {self.precision!r}")
        if self.backbone.family not in FAMILIES:
            raise ConfigError(f"unknown group family {self.backbone.family!r}")
        if self.data.kind not in ("synthetic", "mnist"):
            raise ConfigError(f"unknown dataset kind {self.data.kind!r}")
        if self.data.kind == "mnist" and not self.data.path:
            raise ConfigError("mnist data needs data.path")
        if self.optim.epochs < 0 or self.optim.batch_size < 2:
            raise ConfigError("need epochs >= 0 and batch_size >= 2")
        if self.eval_every < 1:
            raise ConfigError("eval_every must be >= 1")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def canonical_json(self) -> str:
        d = self.to_dict()
        d.pop("out")
        return json.dumps(d, sort_keys=True, separators=(",", ":"))

    @property
    def run_hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()[:12]

    @property
    def run_dir(self) -> str:
        return os.path.join(self.out, f"run-{self.run_hash}")

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        return _build(cls, d, "config")

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        return cls.from_dict(json.loads(text))

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        with open(path) as f:
            return cls.from_json(f.read())

    def replace(self, **changes) -> "ExperimentConfig":
        """Shallow replace; nested specs accept dicts of field overrides."""
        kw = {}
        for k, v in changes.items():
            cur = getattr(self, k)
            if isinstance(v, dict) and dataclasses.is_dataclass(cur):
                v = dataclasses.replace(cur, **v)
            kw[k] = v
        return dataclasses.replace(self, **kw)


_NESTED = {"data": DataSpec, "backbone": BackboneSpec, "head": HeadSpec,
           "sample": SamplePlan, "optim": OptimSpec, "probe": ProbeSpec}


def _build(cls, d, where):
    if not isinstance(d, dict):
        raise ConfigError(f"{where} must be an object")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(d) - known)
    if unknown:
        raise ConfigError(f"unknown key(s) {unknown} in {where}")
    kw = {}
    for k, v in d.items():
        if cls is ExperimentConfig and k in _NESTED:
            v = _build(_NESTED[k], v, f"{where}.{k}")
        elif isinstance(v, list):
            v = tuple(v)
        kw[k] = v
    try:
        return cls(**kw)
    except TypeError as e:
        raise ConfigError(f"{where}: {e}") from None


def sweep_config(**changes) -> ExperimentConfig:
    """The default config with :data:`SWEEP_OVERRIDES` applied, then ``changes``."""
    return ExperimentConfig().replace(**SWEEP_OVERRIDES).replace(**changes)


# --- data and model ---------------------------------------------------------------------

def build_data(config: ExperimentConfig) -> tuple[Dataset, Dataset]:
    spec, bb = config.data, config.backbone
    if spec.kind == "mnist":
        return load_mnist_desk(spec.path, spec.n_train, spec.n_test)
    family = make_family(bb.family, bb.grid, bb.num_scales)
    rng = SeededRng(config.seed, ("data",))
    train = synth_dataset(spec.num_per_class, family, rng.child("train"),
                          noise=spec.noise, period=spec.period)
    test = synth_dataset(spec.test_per_class, family, rng.child("test"),
                         noise=spec.noise, period=spec.period)
    return train, test


@dataclass(eq=False)
class Model:
    backbone: object
    head: object
    classifier: tuple | None = None

    def named_parameters(self) -> list:
        out = []
        if hasattr(self.backbone, "layers"):
            for i, layer in enumerate(self.backbone.layers):
                out += [(f"backbone.{i}.psi", layer.psi), (f"backbone.{i}.bias", layer.bias)]
        else:
            for i, (w, b) in enumerate(zip(self.backbone.weights, self.backbone.biases)):
                out += [(f"backbone.{i}.weight", w), (f"backbone.{i}.bias", b)]
        for name in ("w1", "b1", "w2", "b2"):
            out.append((f"head.{name}", getattr(self.head, name)))
        if self.classifier is not None:
            out += [("classifier.weight", self.classifier[0]), ("classifier.bias", self.classifier[1])]
        return out

    def parameters(self) -> list:
        return [p for _, p in self.named_parameters()]


def build_model(config: ExperimentConfig, num_classes: int = 2) -> Model:
    """Seeded initialization; call inside the run's precision context."""
    bb = config.backbone
    family = make_family(bb.family, bb.grid, bb.num_scales)
    rng = SeededRng(config.seed, ("init",))
    if bb.equivariant:
        backbone = build_backbone(family, rng.child("backbone"), bb.channels, 1,
                                  bb.kernel_size, bb.lift_kernel_size, bb.padding)
    else:
        backbone = build_dense_backbone(family, rng.child("backbone"), bb.hidden, bb.channels[-1])
    c = bb.channels[-1]
    head = build_head(config.sample.base_size * c, rng.child("head"), config.head.hidden,
                      config.head.out)
    gen = rng.child("classifier").generator
    bound = 1.0 / math.sqrt(c)
    classifier = (ad.tensor(gen.uniform(-bound, bound, (c, num_classes)), requires_grad=True),
                  ad.tensor(gen.uniform(-bound, bound, num_classes), requires_grad=True))
    return Model(backbone, head, classifier)


def batch_loss(model: Model, config: ExperimentConfig, x, y, samples, trace=None) -> ad.Tensor:
    G = model.backbone.output_group
    cfg = LossConfig(config.temperature, strict=False)
    if config.loss == "assl":
        return assl_loss(x, model.backbone, model.head, G, samples, cfg, trace)
    Z = backbone_forward(x, model.backbone)
    if config.loss == "hssl":
        return hssl_loss(Z, model.head, G, samples, cfg, trace)
    if config.loss == "fsim":
        patches = [(s.bundle(G, 1), s.bundle(G, 2)) for s in samples]
        return fsim_loss(Z, model.head, G, patches, cfg, trace=trace)
    if config.loss == "supervised":
        return supervised_loss(Z, model.classifier, y)
    raise ConfigError(f"loss {config.loss!r} has no training objective")


def features(model: Model, images, chunk: int = 256) -> np.ndarray:
    """Group-mean of the backbone output, ``[N, C]``; no gradients are recorded."""
    out = []
    for i in range(0, len(images), chunk):
        z = backbone_forward(images[i:i + chunk], model.backbone).data
        out.append(z.mean(axis=2))
    return np.concatenate(out).astype(np.float64) if out else np.zeros((0, 0))


# --- linear probe -----------------------------------------------------------------------

def linear_probe(train_feats, train_labels, test_feats=None, test_labels=None,
                 spec: ProbeSpec = ProbeSpec()) -> float:
    """Softmax regression by full-batch gradient descent; returns top-1 accuracy.

    Features are standardized with training statistics. The step size is
    the inverse of a Lipschitz bound of the gradient, so descent is monotone.
    Iteration stops once the gradient norm drops below ``spec.tol``.
    """
    X = np.asarray(train_feats, dtype=np.float64)
    y = np.asarray(train_labels, dtype=np.int64)
    if len(np.unique(y)) < 2:
        raise ValueError("linear probe needs at least two classes in the training labels")
    if test_feats is None:
        test_feats, test_labels = X, y
    Xt = np.asarray(test_feats, dtype=np.float64)
    yt = np.asarray(test_labels, dtype=np.int64)
    k = int(max(y.max(), yt.max() if yt.size else 0)) + 1
    mu, sd = X.mean(axis=0), X.std(axis=0)
    sd[sd < 1e-12] = 1.0
    A = np.hstack([(X - mu) / sd, np.ones((len(X), 1))])
    At = np.hstack([(Xt - mu) / sd, np.ones((len(Xt), 1))])
    n = len(A)
    lip = 0.5 * np.linalg.eigvalsh(A.T @ A / n).max()
    lr = 1.0 / lip
    W = np.zeros((A.shape[1], k))
    onehot = np.eye(k)[y]
    for _ in range(spec.max_iter):
        logits = A @ W
        logits -= logits.max(axis=1, keepdims=True)
        p = np.exp(logits)
        p /= p.sum(axis=1, keepdims=True)
        grad = A.T @ (p - onehot) / n
        if np.linalg.norm(grad) < spec.tol:
            break
        W -= lr * grad
    pred = np.argmax(At @ W, axis=1)        # ties resolve to the lowest class index
    return float(np.mean(pred == yt)) if yt.size else float("nan")


# --- training ---------------------------------------------------------------------------

@dataclass
class MetricsRow:
    run_hash: str
    epoch: int
    loss_value: float
    probe_accuracy: float
    equivariance_error: float
    wall_seconds: float

    def cells(self) -> list:
        return [self.run_hash, self.epoch, _fmt(self.loss_value), _fmt(self.probe_accuracy),
                _fmt(self.equivariance_error), _fmt(self.wall_seconds)]


def _fmt(v) -> str:
    return repr(float(v))


@dataclass(eq=False)
class RunResult:
    config: ExperimentConfig
    model: Model
    metrics: list = field(default_factory=list)
    step_losses: list = field(default_factory=list)
    out_dir: str | None = None

    @property
    def accuracy(self) -> float:
        return self.metrics[-1].probe_accuracy

    @property
    def run_hash(self) -> str:
        return self.config.run_hash


def _step_samples(config, G, epoch, step, n):
    """View samples for one step.

    In matched mode the stream depends only on (seed, epoch, step), so runs
    that differ only in the contrastive objective see identical samples.
    """
    if config.loss in ("supervised", "none-frozen"):
        return None
    label = "views" if config.matched_samples else f"views-{config.loss}"
    rng = SeededRng(config.seed, (label, str(epoch), str(step)))
    return sample_views(G, config.sample, n, rng)


def _batches(config, n, epoch):
    order = SeededRng(config.seed, ("order", str(epoch))).permutation(n)
    bs = config.optim.batch_size
    return [order[i:i + bs] for i in range(0, n - bs + 1, bs)] or [order]


def _evaluate(model, config, train, test, epoch, loss_value, started, G):
    acc = linear_probe(features(model, train.images), train.labels,
                       features(model, test.images), test.labels, config.probe)
    err = equivariance_error(model.backbone, test.images[:1], G)
    wall = time.perf_counter() - started if config.record_time else 0.0
    return MetricsRow(config.run_hash, epoch, loss_value, acc, err, wall)


def _dump_divergence(model, config, x, y, samples, epoch, step, index, out_dir):
    dump = os.path.join(out_dir or ".", f"nan-dump-e{epoch}-s{step}")
    os.makedirs(dump, exist_ok=True)
    trace = []
    try:
        batch_loss(model, config, x, y, samples, trace)
    except Exception:              # the dump is best effort; the abort below is not
        pass
    write_trace(os.path.join(dump, "trace.csv"), trace)
    info = {"epoch": epoch, "step": step, "examples": [int(i) for i in index],
            "samples": [dataclasses.asdict(s) for s in samples or []]}
    with open(os.path.join(dump, "batch.json"), "w") as f:
        json.dump(info, f, indent=1, sort_keys=True)
    return dump


def train(config: ExperimentConfig, data=None, write: bool = True) -> RunResult:
    """Train, evaluate every ``eval_every`` epochs and write the run directory.

    ``loss="none-frozen"`` skips optimization entirely. A non-finite loss or
    gradient aborts the run with a dump of the offending batch.
    """
    started = time.perf_counter()
    train_set, test_set = data if data is not None else build_data(config)
    out_dir = config.run_dir if write else None
    with ad.precision(config.precision):
        model = build_model(config, max(train_set.num_classes, 2))
        G = model.backbone.output_group
        result = RunResult(config, model, out_dir=out_dir)
        params = model.parameters()
        velocity = [np.zeros_like(p.data) for p in params]
        epochs = 0 if config.loss == "none-frozen" else config.optim.epochs
        x_all = train_set.images.astype(ad.get_dtype())
        sample_log = []

        def run_epoch(epoch, update):
            losses = []
            for step, index in enumerate(_batches(config, len(train_set), epoch)):
                x, y = x_all[index], train_set.labels[index]
                samples = _step_samples(config, G, epoch, step, len(index))
                if update and samples is not None and config.log_samples:
                    sample_log.extend((len(result.step_losses) + len(losses), int(i), s)
                                      for i, s in zip(index, samples))
                with ad.Tape() as tape:
                    loss = batch_loss(model, config, x, y, samples)
                value = float(loss.data)
                grads = ad.backward(tape, loss, params) if update else None
                bad = not math.isfinite(value) or (
                    update and not all(np.all(np.isfinite(grads[p])) for p in params))
                if bad:
                    dump = _dump_divergence(model, config, x, y, samples, epoch, step, index,
                                            out_dir)
                    raise TrainingDivergedError(
                        f"non-finite loss or gradient at epoch {epoch} step {step}; "
                        f"batch dumped to {dump}", dump)
                if update:
                    mu, lr = config.optim.momentum, config.optim.lr_for(config.loss)
                    for p, v in zip(params, velocity):
                        v *= mu
                        v += grads[p]
                        p.data -= (lr * v).astype(p.data.dtype)
                losses.append(value)
            return losses

        if config.loss == "none-frozen":
            initial = float("nan")
        else:
            initial = float(np.mean(run_epoch(0, update=False)))
        result.metrics.append(
            _evaluate(model, config, train_set, test_set, 0, initial, started, G))
        for epoch in range(1, epochs + 1):
            losses = run_epoch(epoch, update=True)
            result.step_losses += losses
            if epoch % config.eval_every == 0 or epoch == epochs:
                result.metrics.append(_evaluate(model, config, train_set, test_set, epoch,
                                                float(np.mean(losses)), started, G))
    if write:
        write_run(result)
        if config.log_samples:
            write_sample_log(os.path.join(out_dir, "samples.csv"), sample_log)
    return result


# --- run directory ----------------------------------------------------------------------

@contextlib.contextmanager
def _sink(target):
    """Yield a text stream for a path or pass an open stream through."""
    if hasattr(target, "write"):
        yield target
    else:
        with open(target, "w", newline="") as f:
            yield f


def write_metrics(target, rows) -> None:
    with _sink(target) as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(METRIC_COLUMNS)
        for r in rows:
            w.writerow(r.cells())


def read_metrics(path) -> list[MetricsRow]:
    with open(path, newline="") as f:
        rows = list(csv.DictReader(f))
    return [MetricsRow(r["run_hash"], int(r["epoch"]), float(r["loss_value"]),
                       float(r["probe_accuracy"]), float(r["equivariance_error"]),
                       float(r["wall_seconds"])) for r in rows]


def write_run(result: RunResult) -> str:
    out = result.out_dir
    os.makedirs(os.path.join(out, "blobs"), exist_ok=True)
    with open(os.path.join(out, "config.json"), "w") as f:
        f.write(json.dumps(result.config.to_dict(), sort_keys=True, indent=1) + "\n")
    write_metrics(os.path.join(out, "metrics.csv"), result.metrics)
    with open(os.path.join(out, "steps.csv"), "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["step", "loss_value"])
        for i, v in enumerate(result.step_losses):
            w.writerow([i, _fmt(v)])
    save_checkpoint(result.model, out, result.config)
    return out


def save_checkpoint(model: Model, out_dir, config: ExperimentConfig | None = None) -> str:
    entries = []
    os.makedirs(os.path.join(out_dir, "blobs"), exist_ok=True)
    for i, (name, p) in enumerate(model.named_parameters()):
        blob = f"blobs/{i:03d}.bin"
        with open(os.path.join(out_dir, blob), "wb") as f:
            ad.save_tensor(f, p)
        entries.append({"name": name, "file": blob, "shape": list(p.shape),
                        "dtype": str(p.data.dtype)})
    manifest = {"format": "homossl-checkpoint-1", "tensors": entries}
    if config is not None:
        manifest["run_hash"] = config.run_hash
    path = os.path.join(out_dir, "manifest.json")
    with open(path, "w") as f:
        f.write(json.dumps(manifest, sort_keys=True, indent=1) + "\n")
    return path


def load_checkpoint(out_dir, model: Model) -> Model:
    """Overwrite ``model``'s parameters in place from a checkpoint directory."""
    with open(os.path.join(out_dir, "manifest.json")) as f:
        manifest = json.load(f)
    named = dict(model.named_parameters())
    for e in manifest["tensors"]:
        if e["name"] not in named:
            raise KeyError(f"checkpoint tensor {e['name']} not in model")
        with open(os.path.join(out_dir, e["file"]), "rb") as f:
            t = ad.load_tensor(f)
        if t.shape != named[e["name"]].shape:
            raise ad.ShapeError("load_checkpoint", t.shape, named[e["name"]].shape)
        named[e["name"]].data = t.data.copy()
    return model


# --- baselines and control --------------------------------------------------------------

def run_frozen_baseline(config: ExperimentConfig, data=None, write=True) -> float:
    return train(config.replace(loss="none-frozen"), data, write).accuracy


def run_supervised_baseline(config: ExperimentConfig, data=None, write=True) -> float:
    return train(config.replace(loss="supervised"), data, write).accuracy


def run_nonequivariant_control(config: ExperimentConfig, data=None, write=True) -> float:
    cfg = config.replace(loss="hssl", backbone={"equivariant": False})
    return train(cfg, data, write).accuracy


def emulated_fibers(flat, channels: int, order: int) -> np.ndarray:
    """Slice an unstructured ``[N, C*|G|]`` output into ``|G|`` fibers of size ``C``."""
    flat = np.asarray(flat)
    if flat.shape[-1] != channels * order:
        raise ad.ShapeError("emulated_fibers", flat.shape, (channels * order,))
    return flat.reshape(flat.shape[:-1] + (channels, order))


# --- parallel fan-out and sweeps ----------------------------------------------------------

def worker_count() -> int:
    try:
        return max(1, int(os.environ.get("HOMOSSL_THREADS", "1")))
    except ValueError:
        return 1


def _accuracy_of(config_dict):
    cfg = ExperimentConfig.from_dict(config_dict)
    return train(cfg).accuracy


def run_many(configs) -> list[float]:
    """Train each config (in worker processes when HOMOSSL_THREADS > 1)."""
    dicts = [c.to_dict() for c in configs]
    workers = min(worker_count(), len(dicts))
    if workers <= 1:
        return [_accuracy_of(d) for d in dicts]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_accuracy_of, dicts))


def _sweep(config, settings, apply, kind, write):
    feasible = []
    for s in settings:
        cfg = apply(config, s)
        try:
            G = make_family(cfg.backbone.family, cfg.backbone.grid, cfg.backbone.num_scales).group
            cfg.sample.validate(G)
        except InfeasibleSampleError as e:
            log.warning("skipping %s=%s: %s", kind, s, e)
            continue
        feasible.append((s, cfg))
    accs = run_many([c for _, c in feasible])
    rows = []
    for (s, _), acc in zip(feasible, accs):
        first = accs[0]
        pct = 100.0 * (acc - first) / first if first else 0.0
        rows.append({"setting": s, "accuracy": acc, "pct_change_vs_first": pct})
    if write:
        os.makedirs(config.out, exist_ok=True)
        path = os.path.join(config.out, f"sweep-{kind}-{config.run_hash}.csv")
        write_sweep(path, rows)
    return rows


def write_sweep(target, rows) -> None:
    with _sink(target) as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(SWEEP_COLUMNS)
        for r in rows:
            w.writerow([r["setting"], _fmt(r["accuracy"]), _fmt(r["pct_change_vs_first"])])


def sweep_base_size(config: ExperimentConfig, sizes, write=True) -> list[dict]:
    """One train+probe per base-space size; the head input grows with the size."""
    return _sweep(config, sizes,
                  lambda c, s: c.replace(sample={"base_size": int(s)}), "base_size", write)


def sweep_topo_distance(config: ExperimentConfig, distances, write=True) -> list[dict]:
    """One train+probe per maximum topographic distance between positive views."""
    for d in distances:
        if d < 0:
            raise ValueError(f"distance must be non-negative, got {d}")
    return _sweep(config, distances,
                  lambda c, d: c.replace(sample={"max_topo_distance": float(d)}),
                  "topo_distance", write)
