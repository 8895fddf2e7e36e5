"""Training loop for the adaptive-margin method and its ablation baselines.

Modes:

* ``supervised`` - labeled cross-entropy only; the unlabeled set is never read.
* ``fixed-threshold`` - one global threshold; samples under it are dropped.
* ``ada-cm`` - adaptive per-class margins; pseudo-label loss on subset I and
  contrastive loss on subset II.
* ``ada-cm-no-contrastive`` - as above without the contrastive term.
* ``contrastive-only`` - adaptive partition, contrastive loss on subset II only.

Each batch takes one Adam step on the weighted total unless
``update="sequential"``, which steps on the three terms one after another.
"""
from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import losses, nn
from .augment import (
    STRONG,
    VIEW_A,
    VIEW_B,
    VIEW_LABELED,
    VIEW_MARGIN,
    VIEW_STRONG,
    WEAK,
    Augmenter,
    AugmentPolicy,
)
from .data import Dataset, SpecError, UnlabeledSet
from .losses import LossWeights
from .margin import ConfidenceMargin, Partition, collect_correct, fixed_threshold_partition, partition_batch
from .metrics import EpochRecord, RunMetrics

log = logging.getLogger(__name__)

MODES = ("supervised", "fixed-threshold", "ada-cm", "ada-cm-no-contrastive", "contrastive-only")


class TrainingDivergence(RuntimeError):
    """A loss or gradient became non-finite."""


@dataclass(frozen=True)
class TrainConfig:
    mode: str = "ada-cm"
    threshold: float | None = None
    epochs: int = 20
    labeled_batch: int = 16
    unlabeled_batch: int = 16
    lr: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weights: LossWeights = field(default_factory=LossWeights)
    B: float = 0.97
    gamma: float = math.e
    initial_margin: float = 0.8
    seed: int = 0
    hidden: int = 64
    embed_dim: int = 32
    activation: str = "tanh"
    conv_channels: tuple[int, ...] = ()
    weak: AugmentPolicy = WEAK
    strong: AugmentPolicy = STRONG
    update: str = "combined"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}; choose from {', '.join(MODES)}")
        if self.mode == "fixed-threshold":
            if self.threshold is None or not 0.0 < self.threshold < 1.0:
                raise ValueError("fixed-threshold mode needs threshold in (0, 1)")
        if self.epochs < 1 or self.labeled_batch < 1 or self.unlabeled_batch < 1:
            raise ValueError("epochs and batch sizes must be >= 1")
        if self.update not in ("combined", "sequential"):
            raise ValueError(f"unknown update scheme {self.update!r}")
        if self.activation not in nn.ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")

    @property
    def uses_pseudo(self) -> bool:
        return self.mode in ("fixed-threshold", "ada-cm", "ada-cm-no-contrastive")

    @property
    def uses_contrastive(self) -> bool:
        return self.mode in ("ada-cm", "contrastive-only")

    @property
    def effective_weights(self) -> LossWeights:
        w = self.weights
        return LossWeights(
            w.lam1,
            w.lam2 if self.uses_pseudo else 0.0,
            w.lam3 if self.uses_contrastive else 0.0,
            w.tau,
        )

    def to_dict(self) -> dict:
        d = asdict(self)
        d["conv_channels"] = list(self.conv_channels)
        for key in ("weak", "strong"):
            d[key]["pool"] = list(d[key]["pool"])
            d[key]["magnitudes"] = {k: list(v) for k, v in sorted(d[key]["magnitudes"].items())}
        return d

    def digest(self, include_seed: bool = True) -> str:
        d = self.to_dict()
        if not include_seed:
            d.pop("seed")
        return config_digest(d)


def config_digest(d: dict) -> str:
    canon = json.dumps(d, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(canon.encode()).hexdigest()[:16]


def architecture(config: TrainConfig, input_shape, n_classes: int) -> nn.Architecture:
    return nn.Architecture(
        tuple(input_shape), n_classes, config.hidden, config.embed_dim,
        config.activation, tuple(config.conv_channels),
    )


def evaluate(params: nn.ModelParams, test: Dataset) -> tuple[float, np.ndarray]:
    """Overall and per-class accuracy on un-augmented samples.

    Per-class entries are NaN for classes absent from ``test``.
    """
    if len(test) == 0:
        raise SpecError("cannot evaluate on an empty test set")
    pred = nn.predict_proba(params, test.samples).argmax(axis=1)
    hit = pred == test.labels
    per_class = np.full(test.n_classes, np.nan)
    for k in range(test.n_classes):
        sel = test.labels == k
        if sel.any():
            per_class[k] = hit[sel].mean()
    return float(hit.mean()), per_class


def data_scale(*arrays) -> np.ndarray | float:
    """Per-dimension std of vector data (1.0 for images)."""
    x = np.concatenate([a for a in arrays if len(a)])
    if x.ndim != 2:
        return 1.0
    sd = x.std(axis=0)
    return np.where(sd > 0, sd, 1.0)


class _LabeledStream:
    """Endless shuffled labeled batches; each pass over the set is one cycle."""

    def __init__(self, n: int, batch: int, seed: int):
        self.n, self.batch, self.seed = n, batch, seed
        self.cycle = -1
        self.order = np.zeros(0, dtype=np.int64)
        self.pos = 0

    def next(self) -> tuple[np.ndarray, np.ndarray]:
        ids, cycles = [], []
        while len(ids) < min(self.batch, self.n):
            if self.pos >= len(self.order):
                self.cycle += 1
                rng = np.random.default_rng(np.random.SeedSequence([self.seed, 0x1AB, self.cycle]))
                self.order = rng.permutation(self.n)
                self.pos = 0
            ids.append(self.order[self.pos])
            cycles.append(self.cycle)
            self.pos += 1
        return np.array(ids, dtype=np.int64), np.array(cycles, dtype=np.int64)


def _onehot(labels, c):
    out = np.zeros((len(labels), c))
    out[np.arange(len(labels)), labels] = 1.0
    return out


@dataclass
class StepTrace:
    """Everything computed for one batch; used by tests and debugging hooks."""

    labeled_ids: np.ndarray
    unlabeled_ids: np.ndarray
    p_a: np.ndarray | None = None
    p_b: np.ndarray | None = None
    p_avg: np.ndarray | None = None
    partition: Partition | None = None
    l_s: float = 0.0
    l_u: float = 0.0
    l_c: float = 0.0
    l_total: float = 0.0
    grads: list | None = None


@dataclass
class EpochState:
    epoch: int
    margin: ConfidenceMargin
    adam: nn.AdamState
    step: int = 0
    sums: dict = field(default_factory=lambda: {"l_s": 0.0, "l_u": 0.0, "l_c": 0.0, "l_total": 0.0})
    n_unlabeled: int = 0
    n_high: int = 0
    n_correct: int = 0
    n_discarded: int = 0


class Trainer:
    """Stateful runner; :func:`train` is the one-call front end.

    ``step_hook(epoch, step, params, trace)`` runs after every batch and
    ``epoch_hook(epoch, params, record)`` after every epoch.
    """

    def __init__(self, config: TrainConfig, labeled: Dataset, unlabeled: UnlabeledSet, test: Dataset,
                 probe=None, params: nn.ModelParams | None = None, step_hook=None, epoch_hook=None):
        self.config = config
        self.labeled = labeled
        self.unlabeled = unlabeled
        self.test = test
        self.probe = probe
        self.step_hook = step_hook
        self.epoch_hook = epoch_hook
        self.n_classes = labeled.n_classes
        arch = architecture(config, labeled.sample_shape, self.n_classes)
        if params is None:
            params = nn.init_params(arch, np.random.default_rng(np.random.SeedSequence([config.seed, 0x1417])))
        elif params.arch != arch:
            raise nn.ShapeError("initial parameters do not match the configured architecture")
        self.params = params
        self.adam = nn.adam_init(params, config.lr, config.beta1, config.beta2, config.eps)
        self.margin = ConfidenceMargin.initial_margin(self.n_classes, config.B, config.gamma, config.initial_margin)
        # jitter scale from labeled data only, so supervised mode never reads U
        self.aug = Augmenter(config.seed, config.weak, config.strong, data_scale(labeled.samples))
        self.labeled_stream = _LabeledStream(len(labeled), config.labeled_batch, config.seed)
        self.weights = config.effective_weights
        self.touch_unlabeled = config.mode != "supervised"
        n_u = len(unlabeled)  # the length is all supervised mode uses
        self.steps_per_epoch = max(math.ceil(n_u / config.unlabeled_batch), math.ceil(len(labeled) / config.labeled_batch))
        self.metrics = RunMetrics(self.n_classes, config.mode, config.seed, config.digest(), config.digest(False))

    # -- margin -----------------------------------------------------------

    def refresh_margin(self, epoch: int) -> ConfidenceMargin:
        """Weak-augmented forward pass over the labeled set, then the class means."""
        x = self.aug.weak_batch(self.labeled.samples, np.arange(len(self.labeled)), epoch, VIEW_MARGIN)
        probs = nn.predict_proba(self.params, x)
        self.margin = self.margin.updated(collect_correct(probs, self.labeled.labels), epoch)
        return self.margin

    # -- one batch ----------------------------------------------------------

    def _unlabeled_order(self, epoch: int) -> np.ndarray:
        rng = np.random.default_rng(np.random.SeedSequence([self.config.seed, 0x0B5, epoch]))
        return rng.permutation(len(self.unlabeled))

    def _partition(self, p_avg: np.ndarray, epoch: int) -> Partition:
        if self.config.mode == "fixed-threshold":
            return fixed_threshold_partition(p_avg, self.config.threshold)
        return partition_batch(p_avg, self.margin, epoch)

    def _labeled_term(self, tape, xl, yl):
        out = nn.forward(self.params, xl, tape)
        return losses.supervised_ce(out.probs, _onehot(yl, self.n_classes))

    def step(self, epoch: int, lab_ids, lab_cycles, unl_ids) -> StepTrace:
        cfg = self.config
        trace = StepTrace(lab_ids, unl_ids)
        xl = self.aug.weak_batch(self.labeled.samples[lab_ids], lab_ids, epoch, VIEW_LABELED, lab_cycles)
        yl = self.labeled.labels[lab_ids]

        if cfg.update == "sequential":
            return self._sequential_step(epoch, trace, xl, yl, unl_ids)

        tape = nn.Tape(self.params)
        l_s = self._labeled_term(tape, xl, yl)
        l_u = l_c = nn.Tensor(0.0)
        if self.touch_unlabeled and len(unl_ids):
            xu = self.unlabeled.samples[unl_ids]
            out_a = nn.forward(self.params, self.aug.weak_batch(xu, unl_ids, epoch, VIEW_A), tape)
            out_b = nn.forward(self.params, self.aug.weak_batch(xu, unl_ids, epoch, VIEW_B), tape)
            trace.p_a, trace.p_b = out_a.probs.data, out_b.probs.data
            trace.p_avg = losses.average_distribution(trace.p_a, trace.p_b)
            part = trace.partition = self._partition(trace.p_avg, epoch)
            if cfg.uses_pseudo and part.n_high:
                hi = unl_ids[part.high]
                xs = self.aug.strong_batch(self.unlabeled.samples[hi], hi, epoch, VIEW_STRONG)
                out_s = nn.forward(self.params, xs, tape)
                l_u = losses.unsupervised_ce(out_s.probs, part.pseudo)
            if cfg.uses_contrastive and part.n_low:
                lo = part.low
                l_c = losses.contrastive_loss(nn.take(out_a.embedding, lo), nn.take(out_b.embedding, lo), self.weights.tau)
        total = losses.total_loss(l_s, l_u, l_c, self.weights)
        trace.l_s, trace.l_u, trace.l_c, trace.l_total = l_s.item(), l_u.item(), l_c.item(), total.item()
        self._check_finite(epoch, trace)
        grads = nn.backward(tape, total)
        if not all(np.all(np.isfinite(g)) for g in grads):
            raise TrainingDivergence(f"non-finite gradient at epoch {epoch}, step {self._state.step}")
        trace.grads = grads
        self.params, self.adam = nn.adam_update(self.params, grads, self.adam)
        return trace

    def _sequential_step(self, epoch, trace, xl, yl, unl_ids) -> StepTrace:
        cfg = self.config
        if self.touch_unlabeled and len(unl_ids):
            xu = self.unlabeled.samples[unl_ids]
            xa = self.aug.weak_batch(xu, unl_ids, epoch, VIEW_A)
            xb = self.aug.weak_batch(xu, unl_ids, epoch, VIEW_B)
            trace.p_a = nn.predict_proba(self.params, xa)
            trace.p_b = nn.predict_proba(self.params, xb)
            trace.p_avg = losses.average_distribution(trace.p_a, trace.p_b)
            part = trace.partition = self._partition(trace.p_avg, epoch)
            if cfg.uses_pseudo and part.n_high:
                hi = unl_ids[part.high]
                xs = self.aug.strong_batch(self.unlabeled.samples[hi], hi, epoch, VIEW_STRONG)
                tape = nn.Tape(self.params)
                l_u = losses.unsupervised_ce(nn.forward(self.params, xs, tape).probs, part.pseudo)
                trace.l_u = l_u.item()
                self._apply(tape, l_u, epoch, trace)
            if cfg.uses_contrastive and part.n_low > 1:
                lo = part.low
                tape = nn.Tape(self.params)
                ea = nn.forward(self.params, xa[lo], tape).embedding
                eb = nn.forward(self.params, xb[lo], tape).embedding
                l_c = losses.contrastive_loss(ea, eb, self.weights.tau)
                trace.l_c = l_c.item()
                self._apply(tape, l_c, epoch, trace)
        tape = nn.Tape(self.params)
        l_s = self._labeled_term(tape, xl, yl)
        trace.l_s = l_s.item()
        trace.l_total = float(losses.total_loss(trace.l_s, trace.l_u, trace.l_c, self.weights))
        self._apply(tape, l_s, epoch, trace)
        return trace

    def _apply(self, tape, loss, epoch, trace):
        self._check_finite(epoch, trace)
        grads = nn.backward(tape, loss)
        self.params, self.adam = nn.adam_update(self.params, grads, self.adam)

    def _check_finite(self, epoch, trace):
        vals = (trace.l_s, trace.l_u, trace.l_c, trace.l_total)
        if not all(np.isfinite(v) for v in vals):
            raise TrainingDivergence(
                f"non-finite loss at epoch {epoch}, batch {self._state.step}: "
                f"l_s={trace.l_s} l_u={trace.l_u} l_c={trace.l_c} l_total={trace.l_total}"
            )

    # -- epochs ---------------------------------------------------------------

    def run_epoch(self, epoch: int) -> EpochRecord:
        cfg = self.config
        self.refresh_margin(epoch)
        st = self._state = EpochState(epoch, self.margin, self.adam)
        order = self._unlabeled_order(epoch) if self.touch_unlabeled else np.zeros(0, dtype=np.int64)
        for k in range(self.steps_per_epoch):
            st.step = k
            lab_ids, cycles = self.labeled_stream.next()
            unl_ids = order[k * cfg.unlabeled_batch : (k + 1) * cfg.unlabeled_batch]
            trace = self.step(epoch, lab_ids, cycles, unl_ids)
            for key in st.sums:
                st.sums[key] += getattr(trace, key)
            part = trace.partition
            if part is not None:
                st.n_unlabeled += len(unl_ids)
                st.n_high += part.n_high
                st.n_discarded += len(part.discarded)
                if self.probe is not None and part.n_high:
                    st.n_correct += self.probe.count_correct(unl_ids[part.high], part.pseudo_classes)
            if self.step_hook is not None:
                self.step_hook(epoch, k, self.params, trace)
        acc, per_class = evaluate(self.params, self.test)
        n = self.steps_per_epoch
        seen = st.n_unlabeled > 0
        record = EpochRecord(
            epoch=epoch,
            l_s=st.sums["l_s"] / n,
            l_u=st.sums["l_u"] / n,
            l_c=st.sums["l_c"] / n,
            l_total=st.sums["l_total"] / n,
            margin_raw=[float(v) for v in self.margin.raw],
            margin_eff=[float(v) for v in self.margin.effective(epoch)],
            subset1_frac=st.n_high / st.n_unlabeled if seen else None,
            pseudo_precision=(st.n_correct / st.n_high) if (self.probe is not None and st.n_high) else None,
            discard_frac=st.n_discarded / st.n_unlabeled if seen else None,
            test_acc=acc,
            acc_class=[None if np.isnan(v) else float(v) for v in per_class],
        )
        self.metrics.rows.append(record)
        if self.epoch_hook is not None:
            self.epoch_hook(epoch, self.params, record)
        log.info("epoch %d mode=%s acc=%.4f l_total=%.4f subset1=%s", epoch, cfg.mode, acc,
                 record.l_total, record.subset1_frac)
        return record

    def run(self) -> tuple[nn.ModelParams, RunMetrics]:
        for epoch in range(self.config.epochs):
            self.run_epoch(epoch)
        return self.params, self.metrics


def train(config: TrainConfig, labeled: Dataset, unlabeled: UnlabeledSet, test: Dataset,
          probe=None, params: nn.ModelParams | None = None, step_hook=None,
          epoch_hook=None) -> tuple[nn.ModelParams, RunMetrics]:
    """Train from scratch (or from ``params``) and return final parameters and metrics.

    ``probe`` is an optional object with ``count_correct(indices, classes)``
    used only for the pseudo-label precision column.
    """
    return Trainer(config, labeled, unlabeled, test, probe, params, step_hook, epoch_hook).run()


def with_mode(config: TrainConfig, mode: str) -> TrainConfig:
    """Parse names like ``fixed-threshold:0.95`` or ``ft=0.8`` into a config copy."""
    name, _, value = mode.replace("=", ":").partition(":")
    if name in ("ft", "fixed-threshold"):
        return replace(config, mode="fixed-threshold", threshold=float(value))
    return replace(config, mode=name, threshold=None)
