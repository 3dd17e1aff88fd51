"""Scenarios and multi-run experiments (pipeline, ablation, hyper-parameter sweeps)."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import gmm as gmm_mod
from .adapt import AdaptConfig, RunReport, adapt_baseline, adapt_imuda, evaluate, pretrain
from .data import (DomainShiftSpec, LabeledDataset, UnlabeledDataset, apply_shift, gen_blobs, gen_two_moons,
                   normalize, rotation_matrix)
from .gmm import GmmModel
from .ndcore import make_rng
from .netcore import NetworkParams, forward_encoder
from .pseudoset import PseudoDataset, generate

log = logging.getLogger(__name__)

SCENARIOS = ("two-moons", "blobs")
ABLATION_ARMS = ("source_only", "baseline_eq1", "imuda", "drop_term3", "drop_term4")
SWEEP_PARAMETERS = ("lambda", "tau")
DEFAULT_SEEDS = (0, 1, 2, 3, 4)
MOONS_CENTER = (0.5, 0.25)


@dataclass
class Scenario:
    name: str
    source: LabeledDataset
    target: UnlabeledDataset
    target_eval: LabeledDataset


def _rotation_about(center, degrees: float, extra_translation=(0.0, 0.0)) -> DomainShiftSpec:
    theta = np.deg2rad(degrees)
    c = np.asarray(center, dtype=float)
    t = c - rotation_matrix(theta) @ c + np.asarray(extra_translation, dtype=float)
    return DomainShiftSpec(rotation=theta, translation=tuple(t.tolist()))


def make_scenario(name: str, seed: int, n: int = 1000, noise: float = 0.1, rotation_deg: float = 35.0) -> Scenario:
    """Build a source/target pair; both are standardized with source statistics.

    ``two-moons``: independent two-moons draws, the target rotated by
    ``rotation_deg`` about the centre of the moons, (0.5, 0.25).  ``blobs``:
    three Gaussian classes, target rotated about their centroid and shifted.
    """
    if name == "two-moons":
        source = gen_two_moons(n, noise, make_rng(seed, "data", "source"), name="source")
        raw_target = gen_two_moons(n, noise, make_rng(seed, "data", "target"), name="target")
        spec = _rotation_about(MOONS_CENTER, rotation_deg)
    elif name == "blobs":
        centers = np.array([[0.0, 0.0], [3.0, 0.0], [1.5, 2.6]])
        per = max(2, n // 3)
        source = gen_blobs(3, per, centers, 0.5, make_rng(seed, "data", "source"), name="source")
        raw_target = gen_blobs(3, per, centers, 0.5, make_rng(seed, "data", "target"), name="target")
        spec = _rotation_about(centers.mean(axis=0), rotation_deg, (0.5, -0.5))
    else:
        raise ValueError(f"unknown scenario {name!r}; valid scenarios: {', '.join(SCENARIOS)}")
    _, shifted = apply_shift(raw_target, spec, name="target")
    source, stats = normalize(source)
    target_eval, _ = normalize(shifted, stats)
    return Scenario(name, source, target_eval.unlabeled("target"), target_eval)


@dataclass
class PipelineResult:
    params0: NetworkParams
    gmm: GmmModel
    pseudo: PseudoDataset
    params: NetworkParams
    report: RunReport


def fit_gmm(params: NetworkParams, source: LabeledDataset, config: AdaptConfig) -> GmmModel:
    return gmm_mod.estimate_map(forward_encoder(params, source.features), source.labels, config.gmm_eps,
                                config.gmm_diagonal)


def make_pseudo(gmm: GmmModel, params: NetworkParams, source: LabeledDataset, config: AdaptConfig) -> PseudoDataset:
    count = config.pseudo_count or len(source)
    return generate(gmm, params, config.tau, count, make_rng(config.seed, "pseudo"),
                    max_draws=config.max_draws_factor * count)


def run_pipeline(scenario: Scenario, config: AdaptConfig, params0: NetworkParams | None = None) -> PipelineResult:
    """Pretrain (unless ``params0`` is given), fit the mixture, draw the pseudo-set, adapt."""
    if params0 is None:
        params0 = pretrain(scenario.source, config)
    model = fit_gmm(params0, scenario.source, config)
    pseudo = make_pseudo(model, params0, scenario.source, config)
    params, report = adapt_imuda(params0, scenario.source, scenario.target, pseudo, config, scenario.target_eval)
    return PipelineResult(params0, model, pseudo, params, report)


@dataclass
class ArmResult:
    arm: str
    seeds: list[int]
    target_acc: list[float]
    source_acc: list[float]
    reports: list[RunReport | None] = field(default_factory=list)

    @property
    def median(self) -> float:
        return float(np.median(self.target_acc))

    def row(self) -> dict:
        return {
            "arm": self.arm,
            "median_target_acc": self.median,
            "seeds": list(self.seeds),
            "target_acc": list(self.target_acc),
            "source_acc": list(self.source_acc),
        }


def _arm_config(arm: str, config: AdaptConfig) -> AdaptConfig:
    if arm == "drop_term3":
        return config.replace(term_mask=(True, True, False, True))
    if arm == "drop_term4":
        return config.replace(term_mask=(True, True, True, False))
    return config


def _ablation_seed(scenario_name, config, seed, arms, scenario_kwargs):
    cfg = config.replace(seed=seed)
    sc = make_scenario(scenario_name, seed, **(scenario_kwargs or {}))
    params0 = pretrain(sc.source, cfg)
    pseudo = None
    out = {}
    for arm in arms:
        if arm == "source_only":
            out[arm] = (evaluate(params0, sc.target_eval).accuracy, evaluate(params0, sc.source).accuracy, None)
            continue
        if arm == "baseline_eq1":
            _, rep = adapt_baseline(params0, sc.source, sc.target, cfg, sc.target_eval)
        else:
            if pseudo is None:
                pseudo = make_pseudo(fit_gmm(params0, sc.source, cfg), params0, sc.source, cfg)
            _, rep = adapt_imuda(params0, sc.source, sc.target, pseudo, _arm_config(arm, cfg), sc.target_eval)
        log.info("ablation seed %d arm %s: target acc %.4f", seed, arm, rep.target_acc)
        out[arm] = (rep.target_acc, rep.source_acc, rep)
    return out


def _sweep_seed(parameter, values, scenario_name, config, seed, scenario_kwargs):
    base = config.replace(seed=seed)
    sc = make_scenario(scenario_name, seed, **(scenario_kwargs or {}))
    params0 = pretrain(sc.source, base)
    model = fit_gmm(params0, sc.source, base)
    shared_pseudo = make_pseudo(model, params0, sc.source, base) if parameter == "lambda" else None
    out = []
    for v in values:
        cfg = base.replace(lam=v) if parameter == "lambda" else base.replace(tau=v)
        pseudo = shared_pseudo or make_pseudo(model, params0, sc.source, cfg)
        _, rep = adapt_imuda(params0, sc.source, sc.target, pseudo, cfg, sc.target_eval)
        log.info("sweep seed %d %s=%g: target acc %.4f", seed, parameter, v, rep.target_acc)
        out.append((rep.target_acc, rep.source_acc, rep))
    return out, params0


def _map_seeds(fn, seeds, workers: int):
    """Apply ``fn`` to every seed, in order; a process pool when ``workers > 1``."""
    seeds = list(seeds)
    if workers <= 1 or len(seeds) <= 1:
        return [fn(s) for s in seeds]
    from concurrent.futures import ProcessPoolExecutor

    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, seeds))


class _Call:
    # picklable partial for the process pool
    def __init__(self, fn, *args, **kwargs):
        self.fn, self.args, self.kwargs = fn, args, kwargs

    def __call__(self, seed):
        return self.fn(seed=seed, *self.args, **self.kwargs)


def run_ablation(scenario_name: str, config: AdaptConfig, seeds=DEFAULT_SEEDS, arms=ABLATION_ARMS,
                 scenario_kwargs: dict | None = None, workers: int = 1) -> list[ArmResult]:
    """Compare adaptation variants; every arm of a seed starts from the same pretrained network."""
    arms = list(arms)
    if not arms:
        raise ValueError("ablation needs at least one arm")
    for arm in arms:
        if arm not in ABLATION_ARMS:
            raise ValueError(f"unknown arm {arm!r}; valid arms: {', '.join(ABLATION_ARMS)}")
    fn = _Call(_ablation_seed, scenario_name=scenario_name, config=config, arms=arms, scenario_kwargs=scenario_kwargs)
    per_seed = _map_seeds(fn, seeds, workers)
    results = []
    for arm in arms:
        res = ArmResult(arm, [], [], [])
        for seed, out in zip(seeds, per_seed):
            tacc, sacc, rep = out[arm]
            res.seeds.append(seed)
            res.target_acc.append(tacc)
            res.source_acc.append(sacc)
            res.reports.append(rep)
        results.append(res)
    return results


def sweep(parameter: str, values, scenario_name: str, config: AdaptConfig, seeds=DEFAULT_SEEDS,
          scenario_kwargs: dict | None = None, workers: int = 1) -> tuple[list[ArmResult], list[NetworkParams]]:
    """One full pipeline per value and seed, sharing the pretrained network per seed.

    A ``tau`` sweep redraws the pseudo-set for every value; a ``lambda``
    sweep reuses one pseudo-set per seed since tau is unchanged.  Returns the
    per-value results and the pretrained network of every seed.
    """
    if parameter not in SWEEP_PARAMETERS:
        raise ValueError(f"unknown sweep parameter {parameter!r}; valid: {', '.join(SWEEP_PARAMETERS)}")
    values = [float(v) for v in values]
    if len(values) < 2:
        raise ValueError("a sweep needs at least two values")
    fn = _Call(_sweep_seed, parameter=parameter, values=values, scenario_name=scenario_name, config=config,
               scenario_kwargs=scenario_kwargs)
    per_seed = _map_seeds(fn, seeds, workers)
    results = [ArmResult(f"{parameter}={v!r}", [], [], []) for v in values]
    for seed, (out, _) in zip(seeds, per_seed):
        for res, (tacc, sacc, rep) in zip(results, out):
            res.seeds.append(seed)
            res.target_acc.append(tacc)
            res.source_acc.append(sacc)
            res.reports.append(rep)
    return results, [p for _, p in per_seed]
