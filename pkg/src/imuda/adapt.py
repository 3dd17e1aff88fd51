"""Training drivers: source pretraining, plain SWD alignment and pseudo-set adaptation.

The adaptation objective on one iteration's batches is

    lam * CE(h(phi(x_s)), y_s)        term 1, source ERM
  + lam * CE(h(z_p), y_p)             term 2, pseudo-set ERM (no encoder)
  + SWD(phi(x_t), z_p)                term 3, target vs pseudo-set
  + SWD(phi(x_s), z_p)                term 4, source vs pseudo-set

with each term switchable through ``AdaptConfig.term_mask``.  The baseline
replaces terms 2-4 with ``SWD(phi(x_s), phi(x_t))``.
"""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .data import LabeledDataset, UnlabeledDataset
from .errors import ConfigError, DimensionError, DivergenceError
from .ndcore import make_rng
from .netcore import (
    AdamState,
    NetworkParams,
    adam_step,
    backward,
    cross_entropy,
    cross_entropy_logit_grad,
    forward_classifier,
    forward_encoder,
    init_network,
    predict_proba,
)
from .pseudoset import PseudoDataset
from .swd import ProjectionSet, draw_projections, swd

log = logging.getLogger(__name__)

IMUDA_TERMS = ("source_ce", "pseudo_ce", "swd_target_pseudo", "swd_source_pseudo")
BASELINE_TERMS = ("source_ce", "swd_source_target")


@dataclass
class AdaptConfig:
    # objective
    lam: float = 1e-2
    tau: float = 0.95
    projections: int = 100
    term_mask: tuple[bool, bool, bool, bool] = (True, True, True, True)
    # optimization
    batch_size: int = 128
    iterations: int = 2000
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    plateau_stop: bool = False
    plateau_window: int = 100
    plateau_tol: float = 1e-4
    eval_every: int = 50
    # pseudo-dataset and mixture
    pseudo_count: int | None = None  # None: match the source size
    max_draws_factor: int = 50
    gmm_eps: float = 1e-4
    gmm_diagonal: bool = False
    # network and pretraining
    hidden: tuple[int, ...] = (32, 32)
    embed_dim: int = 8
    activation: str = "tanh"
    embed_activation: str = "tanh"
    pretrain_epochs: int = 60
    pretrain_lr: float = 5e-3

    def __post_init__(self):
        self.term_mask = tuple(bool(b) for b in self.term_mask)
        self.hidden = tuple(int(h) for h in self.hidden)
        self.validate()

    def validate(self):
        if self.lam < 0:
            raise ConfigError("lambda", "must be >= 0")
        if not 0.0 < self.tau < 1.0:
            raise ConfigError("tau", "must lie in (0, 1)")
        if self.projections < 1:
            raise ConfigError("projections", "must be >= 1")
        if len(self.term_mask) != 4:
            raise ConfigError("term_mask", "needs exactly four flags")
        if not any(self.term_mask):
            raise ConfigError("term_mask", "at least one term must be enabled")
        if self.batch_size < 2:
            raise ConfigError("batch_size", "must be >= 2")
        if self.iterations < 0:
            raise ConfigError("iterations", "must be >= 0")
        if self.lr <= 0 or self.pretrain_lr <= 0:
            raise ConfigError("lr", "learning rates must be positive")
        if self.seed < 0:
            raise ConfigError("seed", "must be non-negative")
        if self.eval_every < 1:
            raise ConfigError("eval_every", "must be >= 1")
        if self.pretrain_epochs < 0:
            raise ConfigError("pretrain_epochs", "must be >= 0")
        if self.gmm_eps < 0:
            raise ConfigError("gmm_eps", "must be >= 0")
        if self.embed_dim < 1:
            raise ConfigError("embed_dim", "must be >= 1")

    def replace(self, **changes) -> "AdaptConfig":
        values = {f.name: getattr(self, f.name) for f in fields(self)}
        values.update(changes)
        return AdaptConfig(**values)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["term_mask"] = list(self.term_mask)
        d["hidden"] = list(self.hidden)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "AdaptConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(sorted(unknown)[0], "unknown configuration field")
        return cls(**d)


@dataclass
class Evaluation:
    accuracy: float
    per_class: list[float]
    confusion: np.ndarray  # rows: true class, cols: predicted


def evaluate(params: NetworkParams, dataset: LabeledDataset) -> Evaluation:
    if len(dataset) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    pred = np.argmax(predict_proba(params, dataset.features), axis=1)
    true = dataset.classes
    k = dataset.k
    confusion = np.zeros((k, k), dtype=np.int64)
    np.add.at(confusion, (true, pred), 1)
    totals = confusion.sum(axis=1)
    per_class = [float(confusion[j, j] / totals[j]) if totals[j] else float("nan") for j in range(k)]
    return Evaluation(float(np.mean(pred == true)), per_class, confusion)


class BatchStream:
    """Endless shuffled index batches; reshuffles when fewer than a batch remain."""

    def __init__(self, n: int, batch_size: int, rng: np.random.Generator):
        if batch_size > n:
            raise DimensionError(f"batch size {batch_size} exceeds dataset size {n}")
        self.n, self.batch_size, self.rng = n, batch_size, rng
        self._order = rng.permutation(n)
        self._pos = 0

    def next(self) -> np.ndarray:
        if self._pos + self.batch_size > self.n:
            self._order = self.rng.permutation(self.n)
            self._pos = 0
        idx = self._order[self._pos:self._pos + self.batch_size]
        self._pos += self.batch_size
        return idx


def build_network(config: AdaptConfig, input_dim: int, n_classes: int) -> NetworkParams:
    sizes = list(config.hidden) + [config.embed_dim]
    acts = [config.activation] * len(config.hidden) + [config.embed_activation]
    return init_network(make_rng(config.seed, "init"), input_dim, sizes, n_classes, acts)


def _adam(params: NetworkParams, config: AdaptConfig, lr: float) -> AdamState:
    return AdamState.for_params(params, lr=lr, beta1=config.beta1, beta2=config.beta2, eps=config.adam_eps)


def _source_ce_grads(params, xs, ys, weight):
    zs, enc = forward_encoder(params, xs, keep=True)
    ps, cls = forward_classifier(params, zs, keep=True)
    loss = cross_entropy(ps, ys)
    grads = backward(params, enc, cls, dlogits=cross_entropy_logit_grad(ps, ys, weight))
    return loss, grads


def pretrain(source: LabeledDataset, config: AdaptConfig, init: NetworkParams | None = None) -> NetworkParams:
    """Mini-batch Adam on source cross-entropy for ``config.pretrain_epochs`` epochs."""
    counts = np.bincount(source.classes, minlength=source.k)
    if np.any(counts < 2):
        raise ValueError(f"every class needs >= 2 source samples, got counts {counts.tolist()}")
    params = init if init is not None else build_network(config, source.dim, source.k)
    if params.input_dim != source.dim or params.n_classes != source.k:
        raise DimensionError(f"network is {params.input_dim}->{params.n_classes}, data is {source.dim}->{source.k}")
    batch = min(config.batch_size, len(source))
    stream = BatchStream(len(source), batch, make_rng(config.seed, "pretrain-batches"))
    state = _adam(params, config, config.pretrain_lr)
    steps = config.pretrain_epochs * (len(source) // batch)
    for step in range(steps):
        idx = stream.next()
        loss, grads = _source_ce_grads(params, source.features[idx], source.labels[idx], 1.0)
        if not np.isfinite(loss):
            raise DivergenceError(f"pretraining loss became non-finite at step {step}", last_finite=params)
        params, state = adam_step(params, grads, state)
    if steps:
        log.info("pretrain: %d steps, source accuracy %.4f", steps, evaluate(params, source).accuracy)
    return params


def imuda_objective(params: NetworkParams, xs, ys, xt, zp, yp, proj: ProjectionSet, lam: float,
                    mask=(True, True, True, True), need_grad: bool = True):
    """Terms, masked total and gradient of the four-term objective on one set of batches.

    Returns ``(terms, total, grads)`` where ``terms`` holds the four raw
    (unweighted) term values; disabled terms are still evaluated for the
    record but contribute neither to ``total`` nor to ``grads``.
    """
    zs, enc_s = forward_encoder(params, xs, keep=True)
    zt, enc_t = forward_encoder(params, xt, keep=True)
    ps, cls_s = forward_classifier(params, zs, keep=True)
    pp, cls_p = forward_classifier(params, zp, keep=True)
    t1 = cross_entropy(ps, ys)
    t2 = cross_entropy(pp, yp)
    r3 = swd(zt, zp, proj, with_grad=need_grad and mask[2])
    r4 = swd(zs, zp, proj, with_grad=need_grad and mask[3])
    terms = np.array([t1, t2, r3.value, r4.value])
    weights = np.array([lam, lam, 1.0, 1.0]) * np.asarray(mask, dtype=float)
    total = float(terms @ weights)
    if not need_grad:
        return terms, total, None

    dembed_s = r4.grad_a if mask[3] else None
    dlogits_s = cross_entropy_logit_grad(ps, ys, lam) if mask[0] else None
    grads = backward(params, enc_s, cls_s, dlogits=dlogits_s, dembed=dembed_s)
    if mask[1]:
        grads = grads + backward(params, None, cls_p, dlogits=cross_entropy_logit_grad(pp, yp, lam))
    if mask[2]:
        grads = grads + backward(params, enc_t, None, dembed=r3.grad_a)
    return terms, total, grads


def baseline_objective(params: NetworkParams, xs, ys, xt, proj: ProjectionSet, lam: float, need_grad: bool = True):
    """``lam * CE(source) + SWD(phi(x_s), phi(x_t))``; returns ``(terms, total, grads)``."""
    zs, enc_s = forward_encoder(params, xs, keep=True)
    zt, enc_t = forward_encoder(params, xt, keep=True)
    ps, cls_s = forward_classifier(params, zs, keep=True)
    t1 = cross_entropy(ps, ys)
    r = swd(zs, zt, proj, with_grad=need_grad)
    terms = np.array([t1, r.value])
    total = float(terms @ np.array([lam, 1.0]))
    if not need_grad:
        return terms, total, None
    grads = backward(params, enc_s, cls_s, dlogits=cross_entropy_logit_grad(ps, ys, lam), dembed=r.grad_a)
    grads = grads + backward(params, enc_t, None, dembed=r.grad_b)
    return terms, total, grads


@dataclass
class RunReport:
    method: str
    term_names: list[str]
    term_weights: list[float]
    terms: np.ndarray  # (iterations, n_terms), raw values
    total: np.ndarray  # (iterations,)
    checkpoints: list[dict] = field(default_factory=list)  # {"iteration", "source_acc", "target_acc"}
    source_acc: float = float("nan")
    target_acc: float | None = None
    source_only_acc: float | None = None
    final_swd: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)
    seed: int = 0
    stopped_early: bool = False
    wall_clock: float = 0.0

    @property
    def iterations_run(self) -> int:
        return self.total.shape[0]

    def to_dict(self, include_timing: bool = False) -> dict:
        d = {
            "method": self.method,
            "seed": self.seed,
            "config": self.config,
            "iterations_run": self.iterations_run,
            "stopped_early": self.stopped_early,
            "term_names": list(self.term_names),
            "term_weights": [float(w) for w in self.term_weights],
            "source_acc": self.source_acc,
            "target_acc": self.target_acc,
            "source_only_acc": self.source_only_acc,
            "final_swd": dict(self.final_swd),
            "checkpoints": list(self.checkpoints),
            "terms": self.terms.tolist(),
            "total": self.total.tolist(),
        }
        if include_timing:
            d["wall_clock"] = self.wall_clock
        return d


def _final_swd(a: np.ndarray, b: np.ndarray, config: AdaptConfig) -> float:
    m = min(a.shape[0], b.shape[0])
    proj = draw_projections(config.projections, a.shape[1], config.seed, "final")
    return swd(a[:m], b[:m], proj, with_grad=False).value


def _plateaued(total: list[float], config: AdaptConfig) -> bool:
    w = config.plateau_window
    if len(total) < 2 * w:
        return False
    prev = float(np.mean(total[-2 * w:-w]))
    last = float(np.mean(total[-w:]))
    return abs(last - prev) <= config.plateau_tol * max(abs(prev), 1e-12)


def _run_loop(method, term_names, weights, step_fn, params, config, source, target_eval):
    state = _adam(params, config, config.lr)
    terms, totals, checkpoints = [], [], []
    started = time.perf_counter()
    stopped = False

    def checkpoint(it):
        rec = {"iteration": it, "source_acc": evaluate(params, source).accuracy}
        rec["target_acc"] = evaluate(params, target_eval).accuracy if target_eval is not None else None
        checkpoints.append(rec)

    checkpoint(0)
    for it in range(1, config.iterations + 1):
        t, total, grads = step_fn(params, it)
        if not np.isfinite(total):
            raise DivergenceError(f"{method}: loss became non-finite at iteration {it} (terms {t.tolist()})",
                                  last_finite=params)
        params, state = adam_step(params, grads, state)
        terms.append(t)
        totals.append(total)
        if it % config.eval_every == 0 or it == config.iterations:
            checkpoint(it)
        if config.plateau_stop and _plateaued(totals, config):
            if checkpoints[-1]["iteration"] != it:
                checkpoint(it)
            stopped = True
            log.info("%s: loss plateaued at iteration %d", method, it)
            break
    report = RunReport(
        method=method,
        term_names=list(term_names),
        term_weights=[float(w) for w in weights],
        terms=np.array(terms).reshape(len(terms), len(term_names)),
        total=np.array(totals, dtype=float),
        checkpoints=checkpoints,
        source_acc=checkpoints[-1]["source_acc"],
        target_acc=checkpoints[-1]["target_acc"],
        config=config.to_dict(),
        seed=config.seed,
        stopped_early=stopped,
        wall_clock=time.perf_counter() - started,
    )
    return params, report


def _check_batch(config: AdaptConfig, **sizes):
    for name, n in sizes.items():
        if config.batch_size > n:
            raise DimensionError(f"batch size {config.batch_size} exceeds {name} size {n}")


def adapt_imuda(params0: NetworkParams, source: LabeledDataset, target: UnlabeledDataset, pseudo: PseudoDataset,
                config: AdaptConfig, target_eval: LabeledDataset | None = None) -> tuple[NetworkParams, RunReport]:
    """Optimize the four-term objective for ``config.iterations`` steps.

    ``target_eval`` is only used to record target accuracy at checkpoints; the
    optimization sees ``target.features`` and nothing else from the target.
    """
    if not isinstance(target, UnlabeledDataset):
        raise TypeError("adaptation accepts the unlabeled target view only")
    if pseudo.samples.shape[1] != params0.embed_dim:
        raise DimensionError(f"pseudo samples have dim {pseudo.samples.shape[1]}, embedding dim is {params0.embed_dim}")
    if target.dim != params0.input_dim or source.dim != params0.input_dim:
        raise DimensionError(f"network input dim {params0.input_dim}, source {source.dim}, target {target.dim}")
    _check_batch(config, source=len(source), target=len(target), pseudo=len(pseudo))
    mask = config.term_mask
    src = BatchStream(len(source), config.batch_size, make_rng(config.seed, "adapt-source"))
    tgt = BatchStream(len(target), config.batch_size, make_rng(config.seed, "adapt-target"))
    pse = BatchStream(len(pseudo), config.batch_size, make_rng(config.seed, "adapt-pseudo"))
    zp_all, yp_all = pseudo.samples, pseudo.labels
    dim = params0.embed_dim

    def step(params, it):
        i_s, i_t, i_p = src.next(), tgt.next(), pse.next()
        proj = draw_projections(config.projections, dim, config.seed, "adapt", it)
        return imuda_objective(params, source.features[i_s], source.labels[i_s], target.features[i_t],
                               zp_all[i_p], yp_all[i_p], proj, config.lam, mask)

    weights = np.array([config.lam, config.lam, 1.0, 1.0]) * np.asarray(mask, dtype=float)
    params, report = _run_loop("imuda", IMUDA_TERMS, weights, step, params0, config, source, target_eval)
    if target_eval is not None:
        report.source_only_acc = evaluate(params0, target_eval).accuracy
    report.final_swd = {
        "swd_source_pseudo": _final_swd(forward_encoder(params, source.features), pseudo.samples, config),
        "swd_target_pseudo": _final_swd(forward_encoder(params, target.features), pseudo.samples, config),
    }
    return params, report


def adapt_baseline(params0: NetworkParams, source: LabeledDataset, target: UnlabeledDataset, config: AdaptConfig,
                   target_eval: LabeledDataset | None = None) -> tuple[NetworkParams, RunReport]:
    """Source ERM plus direct SWD alignment of encoded source and target batches."""
    if not isinstance(target, UnlabeledDataset):
        raise TypeError("adaptation accepts the unlabeled target view only")
    if target.dim != params0.input_dim or source.dim != params0.input_dim:
        raise DimensionError(f"network input dim {params0.input_dim}, source {source.dim}, target {target.dim}")
    _check_batch(config, source=len(source), target=len(target))
    src = BatchStream(len(source), config.batch_size, make_rng(config.seed, "adapt-source"))
    tgt = BatchStream(len(target), config.batch_size, make_rng(config.seed, "adapt-target"))
    dim = params0.embed_dim

    def step(params, it):
        i_s, i_t = src.next(), tgt.next()
        proj = draw_projections(config.projections, dim, config.seed, "adapt", it)
        return baseline_objective(params, source.features[i_s], source.labels[i_s], target.features[i_t],
                                  proj, config.lam)

    params, report = _run_loop("baseline", BASELINE_TERMS, [config.lam, 1.0], step, params0, config, source,
                               target_eval)
    if target_eval is not None:
        report.source_only_acc = evaluate(params0, target_eval).accuracy
    report.final_swd = {
        "swd_source_target": _final_swd(forward_encoder(params, source.features),
                                        forward_encoder(params, target.features), config),
    }
    return params, report


def continue_pretraining(params0: NetworkParams, source: LabeledDataset, config: AdaptConfig) -> NetworkParams:
    """Weighted source ERM on the adaptation batch stream.

    This is what the adaptation loop reduces to when only the source
    cross-entropy term is enabled.
    """
    src = BatchStream(len(source), config.batch_size, make_rng(config.seed, "adapt-source"))
    state = _adam(params0, config, config.lr)
    params = params0
    for _ in range(config.iterations):
        idx = src.next()
        _, grads = _source_ce_grads(params, source.features[idx], source.labels[idx], config.lam)
        params, state = adam_step(params, grads, state)
    return params
