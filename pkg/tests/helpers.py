"""Shared test fixtures: tiny models, a composite objective, finite differences."""
import numpy as np

from adacm import losses, nn
from adacm.margin import ConfidenceMargin, partition_batch


def tiny_arch(n_in=4, n_classes=3, hidden=8, embed=6, activation="tanh", conv=()):
    shape = (n_in,) if isinstance(n_in, int) else tuple(n_in)
    return nn.Architecture(shape, n_classes, hidden, embed, activation, tuple(conv))


def tiny_model(seed=0, **kw):
    return nn.init_params(tiny_arch(**kw), np.random.default_rng(seed))


def central_differences(loss_of, params: nn.ModelParams, h=1e-5):
    """Numerical gradient of ``loss_of(params) -> float`` for every entry."""
    out = []
    for k, v in enumerate(params.values):
        g = np.zeros_like(v)
        for idx in np.ndindex(v.shape):
            plus = params.copy()
            minus = params.copy()
            plus.values[k][idx] += h
            minus.values[k][idx] -= h
            g[idx] = (loss_of(plus) - loss_of(minus)) / (2 * h)
        out.append(g)
    return out


def max_relative_error(analytic, numeric, floor=1e-7):
    worst = 0.0
    for a, n in zip(analytic, numeric):
        rel = np.abs(a - n) / np.maximum(np.abs(a) + np.abs(n), floor)
        worst = max(worst, float(rel.max(initial=0.0)))
    return worst


class CompositeProblem:
    """Labeled batch plus three unlabeled views with a frozen partition.

    The partition is computed once at the base parameters so that the
    objective is smooth in a neighbourhood (finite differences stay valid).
    """

    def __init__(self, params, seed=0, n_lab=5, n_unl=8, threshold=None, weights=None):
        rng = np.random.default_rng(seed)
        arch = params.arch
        shape = arch.input_shape
        c = arch.n_classes
        self.weights = weights or losses.LossWeights()
        self.xl = rng.normal(size=(n_lab, *shape))
        self.yl = np.eye(c)[rng.integers(0, c, n_lab)]
        self.xa = rng.normal(size=(n_unl, *shape))
        self.xb = self.xa + 0.1 * rng.normal(size=self.xa.shape)
        self.xs = self.xa + 0.5 * rng.normal(size=self.xa.shape)
        pa = nn.forward(params, self.xa).probs
        pb = nn.forward(params, self.xb).probs
        avg = losses.average_distribution(pa, pb)
        if threshold is None:
            # median confidence splits the batch into two non-empty halves
            threshold = float(np.median(avg.max(axis=1)))
        margin = ConfidenceMargin(np.full(c, 1.0), B=0.97, gamma=np.e)
        margin.raw = np.full(c, threshold / margin.effective(50)[0])
        self.partition = partition_batch(avg, margin, 50)

    def terms(self, params, tape):
        part = self.partition
        l_s = losses.supervised_ce(nn.forward(params, self.xl, tape).probs, self.yl)
        out_s = nn.forward(params, self.xs[part.high], tape)
        l_u = losses.unsupervised_ce(out_s.probs, part.pseudo)
        ea = nn.forward(params, self.xa[part.low], tape).embedding
        eb = nn.forward(params, self.xb[part.low], tape).embedding
        l_c = losses.contrastive_loss(ea, eb, self.weights.tau)
        return l_s, l_u, l_c

    def loss(self, params, tape=None):
        tape = tape or nn.Tape(params)
        return losses.total_loss(*self.terms(params, tape), self.weights)

    def value(self, params) -> float:
        return self.loss(params).item()

    def analytic(self, params):
        tape = nn.Tape(params)
        return nn.backward(tape, self.loss(params, tape))


ORACLE_NAMES = {
    "enc1.weight": "w1", "enc1.bias": "b1",
    "enc2.weight": "w2", "enc2.bias": "b2",
    "head.weight": "w3", "head.bias": "b3",
}


def scripted_single_batch(initial_margin=0.8, seed=3):
    """Run one epoch (1 labeled + 2 unlabeled samples) and its straight-line replay.

    Returns ``(trace, margin, params_after, record, expected)`` where the
    first four come from the package and ``expected`` from the oracle.
    """
    from dataclasses import replace

    from adacm.augment import STRONG, AugmentPolicy
    from adacm.data import Dataset, UnlabeledSet
    from adacm.trainer import TrainConfig, Trainer

    from . import trace_oracle

    rng = np.random.default_rng(seed)
    xl = rng.normal(size=(1, 3))
    yl = np.array([1])
    xu = rng.normal(size=(2, 3))
    xt = rng.normal(size=(4, 3))
    yt = np.array([0, 1, 2, 1])
    params = nn.init_params(tiny_arch(n_in=3, n_classes=3, hidden=4, embed=3), rng)
    # the labeled sample is predicted correctly so its class margin is learned
    params.values[params.names.index("head.bias")][1] += 0.4

    strong = replace(STRONG, pool=("jitter",), n_ops=1)
    cfg = TrainConfig(mode="ada-cm", epochs=1, seed=seed, hidden=4, embed_dim=3,
                      initial_margin=initial_margin, strong=strong)
    traces = []
    trainer = Trainer(cfg, Dataset(xl, yl, 3), UnlabeledSet(xu, np.arange(2)), Dataset(xt, yt, 3),
                      params=params, step_hook=lambda e, k, p, t: traces.append(t))
    params_after, metrics = trainer.run()

    as_lists = {ORACLE_NAMES[n]: v.tolist() for n, v in zip(params.names, params.values)}
    expected = trace_oracle.replay(
        as_lists, xl.tolist(), yl.tolist(), xu.tolist(), xt.tolist(), yt.tolist(),
        seed=seed, n_classes=3, weak_jitter=cfg.weak.jitter, strong_jitter=strong.jitter,
        strong_range=strong.magnitudes["jitter"], f=initial_margin,
    )
    assert len(traces) == 1
    return traces[0], trainer.margin, params_after, metrics.rows[0], expected


def compare_single_batch(trace, margin, params_after, record, expected, tol=1e-10):
    """Every intermediate against the replay; returns the worst absolute gap."""
    worst = 0.0

    def gap(a, b):
        nonlocal worst
        d = float(np.max(np.abs(np.asarray(a, dtype=float) - np.asarray(b, dtype=float)), initial=0.0))
        worst = max(worst, d)

    gap(margin.raw, expected["margin_raw"])
    gap(margin.effective(0), expected["margin_eff"])
    gap(record.margin_raw, expected["margin_raw"])
    gap(record.margin_eff, expected["margin_eff"])
    assert trace.unlabeled_ids.tolist() == expected["unlabeled_ids"]
    gap(trace.p_a, expected["p_a"])
    gap(trace.p_b, expected["p_b"])
    gap(trace.p_avg, expected["p_avg"])
    assert trace.partition.high.tolist() == expected["high"]
    assert trace.partition.pseudo_classes.tolist() == expected["pseudo"]
    assert trace.partition.low.tolist() == expected["low"]
    for key in ("l_s", "l_u", "l_c", "l_total"):
        gap(getattr(trace, key), expected[key])
    for name, g in zip(params_after.names, trace.grads):
        gap(g, expected["grads"][ORACLE_NAMES[name]])
    for name, v in zip(params_after.names, params_after.values):
        gap(v, expected["params"][ORACLE_NAMES[name]])
    gap(record.test_acc, expected["test_acc"])
    assert worst < tol, worst
    return worst
