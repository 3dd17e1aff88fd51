"""Command-line entry point: ``imuda <command> [options]``.

Commands: ``pretrain``, ``adapt``, ``ablate``, ``sweep``, ``project``,
``export`` and ``replay``.  Settings resolve as built-in defaults < ``--config``
JSON file < ``IMUDA_*`` environment variables < command-line flags.  Every
command writes ``manifest.json`` (the resolved settings plus input digests)
into ``--out-dir`` before doing any work; ``imuda replay manifest.json``
reruns it.  ``report.json`` and ``curves.csv`` hold no timing or paths, so
reruns are byte-identical; wall-clock time goes to ``timing.json``.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import os
import sys
import time
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt
from .adapt import AdaptConfig, adapt_baseline, adapt_imuda, evaluate, pretrain
from .data import export_csv
from .errors import ConfigError, DimensionError, FormatError, ImudaError
from .experiments import (ABLATION_ARMS, DEFAULT_SEEDS, SCENARIOS, SWEEP_PARAMETERS, fit_gmm, make_pseudo,
                          make_scenario, run_ablation, sweep)
from .gmm import GmmModel
from .netcore import NetworkParams, forward_encoder

log = logging.getLogger("imuda")

ENV_PREFIX = "IMUDA_"
MANIFEST_FORMAT = "imuda-manifest"
MANIFEST_VERSION = 1
REPORT_VERSION = 1
CURVES_VERSION = 1
COMMANDS = ("pretrain", "adapt", "ablate", "sweep", "project", "export")

# scenario settings kept next to the AdaptConfig fields
SCENARIO_DEFAULTS = {"scenario": None, "n": 1000, "noise": 0.1, "rotation_deg": 35.0}
# flag / env / file aliases for AdaptConfig fields
ALIASES = {"lambda": "lam"}
_CONFIG_FIELDS = {f.name: f for f in fields(AdaptConfig)}


class UsageError(Exception):
    pass


# --- settings resolution -----------------------------------------------------


def _parse_mask(value) -> list[bool]:
    if isinstance(value, str):
        if len(value) != 4 or set(value) - {"0", "1"}:
            raise ConfigError("term_mask", f"expected 4 characters of 0/1, got {value!r}")
        return [c == "1" for c in value]
    mask = [bool(v) for v in value]
    if len(mask) != 4:
        raise ConfigError("term_mask", "needs exactly four flags")
    return mask


def _coerce(key: str, value):
    """Convert a raw string or JSON value to the type of setting ``key``."""
    if key == "term_mask":
        return _parse_mask(value)
    if key == "scenario":
        return str(value)
    if key in ("n",):
        return int(value)
    if key in ("noise", "rotation_deg"):
        return float(value)
    if key == "seeds":
        if isinstance(value, str):
            value = value.replace(",", " ").split()
        return [int(v) for v in value]
    f = _CONFIG_FIELDS[key]
    kind = str(f.type)
    try:
        if key == "hidden":
            if isinstance(value, str):
                value = value.replace(",", " ").split()
            return [int(v) for v in value]
        if value is None:
            return None
        if kind.startswith("bool"):
            if isinstance(value, str):
                if value.lower() not in ("0", "1", "true", "false"):
                    raise ValueError(value)
                return value.lower() in ("1", "true")
            return bool(value)
        if kind.startswith("int"):
            if isinstance(value, float) and not value.is_integer():
                raise ValueError(value)
            return int(value)
        if kind.startswith("float"):
            return float(value)
        return str(value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(key, f"cannot interpret {value!r}") from exc


def _canonical_key(key: str) -> str:
    key = key.replace("-", "_").lower()
    key = ALIASES.get(key, key)
    if key not in _CONFIG_FIELDS and key not in SCENARIO_DEFAULTS and key != "seeds":
        raise ConfigError(key, "unknown setting")
    return key


def _from_mapping(raw: dict) -> dict:
    return {_canonical_key(k): _coerce(_canonical_key(k), v) for k, v in raw.items()}


def _env_settings(environ) -> dict:
    out = {}
    for name, value in environ.items():
        if name.startswith(ENV_PREFIX) and len(name) > len(ENV_PREFIX):
            key = _canonical_key(name[len(ENV_PREFIX):])
            out[key] = _coerce(key, value)
    return out


FLAG_KEYS = ("scenario", "seed", "lam", "tau", "projections", "batch_size", "iterations", "term_mask", "n", "noise",
             "rotation_deg", "seeds")


def resolve_settings(args, environ=None) -> dict:
    """Merge defaults, config file, environment and flags into one flat dict."""
    environ = os.environ if environ is None else environ
    settings = dict(SCENARIO_DEFAULTS)
    settings.update(AdaptConfig().to_dict())
    settings["seeds"] = list(DEFAULT_SEEDS)
    if getattr(args, "config", None):
        try:
            raw = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config file {args.config}: {exc}") from exc
        if not isinstance(raw, dict):
            raise UsageError(f"config file {args.config} must hold a JSON object")
        settings.update(_from_mapping(raw))
    settings.update(_env_settings(environ))
    for key in FLAG_KEYS:
        value = getattr(args, key, None)
        if value is not None:
            settings[key] = _coerce(key, value)
    return settings


def split_settings(settings: dict) -> tuple[str, dict, AdaptConfig]:
    scenario = settings["scenario"]
    if scenario is None:
        raise UsageError(f"no scenario given; valid scenarios: {', '.join(SCENARIOS)}")
    if scenario not in SCENARIOS:
        raise UsageError(f"unknown scenario {scenario!r}; valid scenarios: {', '.join(SCENARIOS)}")
    kwargs = {"n": settings["n"], "noise": settings["noise"], "rotation_deg": settings["rotation_deg"]}
    config = AdaptConfig.from_dict({k: v for k, v in settings.items() if k in _CONFIG_FIELDS})
    return scenario, kwargs, config


# --- output helpers ----------------------------------------------------------


def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def sha256_text(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _write_csv(path, header, rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    Path(path).write_text(buf.getvalue())


def write_curves(path, report) -> None:
    """Per-iteration term values and totals; accuracies only where evaluated."""
    n_terms = len(report.term_names)
    acc = {c["iteration"]: c for c in report.checkpoints}
    header = ["iteration"] + [f"term{i + 1}" for i in range(n_terms)] + ["total", "source_acc", "target_acc"]
    rows = []
    for it in sorted(set(range(1, report.iterations_run + 1)) | set(acc)):
        c = acc.get(it, {})
        terms = report.terms[it - 1].tolist() if it >= 1 else [None] * n_terms
        total = float(report.total[it - 1]) if it >= 1 else None
        rows.append([it] + terms + [total, c.get("source_acc"), c.get("target_acc")])
    _write_csv(path, header, rows)


def _run_summary(report) -> dict:
    d = report.to_dict(include_timing=False)
    d.pop("terms")
    d.pop("total")
    d["final_total"] = float(report.total[-1]) if report.iterations_run else None
    return d


def _network_digest(params: NetworkParams) -> str:
    return sha256_text(ckpt.dumps(ckpt.to_container(params)))


def _load_kind(path, cls, what: str):
    try:
        obj = ckpt.load(path)
    except OSError as exc:
        raise UsageError(f"cannot read {what} checkpoint {path}: {exc}") from exc
    if not isinstance(obj, cls):
        raise FormatError(f"{path}: expected a {what} checkpoint")
    return obj


def _check_dims(params: NetworkParams, scenario, path) -> None:
    if params.input_dim != scenario.source.dim or params.n_classes != scenario.source.k:
        raise DimensionError(
            f"checkpoint {path} has input dim {params.input_dim} and {params.n_classes} classes; "
            f"scenario {scenario.name} has input dim {scenario.source.dim} and {scenario.source.k} classes"
        )


# --- commands ----------------------------------------------------------------
# Each command receives the resolved settings, its parsed args and the output
# directory, and returns the list of files it wrote.


def cmd_pretrain(settings, args, out: Path) -> list[str]:
    name, kwargs, config = split_settings(settings)
    sc = make_scenario(name, config.seed, **kwargs)
    params = pretrain(sc.source, config)
    model = fit_gmm(params, sc.source, config)
    ckpt.save(params, out / "params.json")
    ckpt.save(model, out / "gmm.json")
    report = {
        "schema_version": REPORT_VERSION,
        "command": "pretrain",
        "scenario": name,
        "seed": config.seed,
        "source_acc": evaluate(params, sc.source).accuracy,
        "source_only_acc": evaluate(params, sc.target_eval).accuracy,
        "gmm_weights": model.weights.tolist(),
        "params_digest": _network_digest(params),
    }
    ckpt.write_json(out / "report.json", report)
    return ["params.json", "gmm.json", "report.json"]


def cmd_adapt(settings, args, out: Path) -> list[str]:
    name, kwargs, config = split_settings(settings)
    sc = make_scenario(name, config.seed, **kwargs)
    if args.checkpoint:
        params0 = _load_kind(args.checkpoint, NetworkParams, "network")
        _check_dims(params0, sc, args.checkpoint)
    else:
        params0 = pretrain(sc.source, config)
    if args.gmm:
        model = _load_kind(args.gmm, GmmModel, "gmm")
        if model.dim != params0.embed_dim or model.k != params0.n_classes:
            raise DimensionError(f"gmm {args.gmm} has dim {model.dim}, k {model.k}; network embeds to "
                                 f"{params0.embed_dim} with {params0.n_classes} classes")
    else:
        model = fit_gmm(params0, sc.source, config)
    pseudo = make_pseudo(model, params0, sc.source, config)
    started = time.perf_counter()
    params, run = adapt_imuda(params0, sc.source, sc.target, pseudo, config, sc.target_eval)
    timing = {"imuda_seconds": time.perf_counter() - started}
    written = ["params_adapted.json", "pseudo.json", "report.json", "curves.csv"]
    ckpt.save(params, out / "params_adapted.json")
    ckpt.save(pseudo, out / "pseudo.json")
    write_curves(out / "curves.csv", run)
    report = {
        "schema_version": REPORT_VERSION,
        "command": "adapt",
        "scenario": name,
        "seed": config.seed,
        "source_acc_pretrained": evaluate(params0, sc.source).accuracy,
        "source_only_acc": run.source_only_acc,
        "imuda_acc": run.target_acc,
        "imuda_source_acc": run.source_acc,
        "final_swd_source_pseudo": run.final_swd["swd_source_pseudo"],
        "final_swd_target_pseudo": run.final_swd["swd_target_pseudo"],
        "pseudo": {"count": len(pseudo), "acceptance_rate": pseudo.acceptance_rate,
                   "per_class": pseudo.per_class_counts, "attempted": pseudo.attempted},
        "params0_digest": _network_digest(params0),
        "run": _run_summary(run),
    }
    if args.baseline:
        started = time.perf_counter()
        _, base = adapt_baseline(params0, sc.source, sc.target, config, sc.target_eval)
        timing["baseline_seconds"] = time.perf_counter() - started
        report["baseline_eq1_acc"] = base.target_acc
        report["final_swd_source_target"] = base.final_swd["swd_source_target"]
        report["baseline_run"] = _run_summary(base)
        write_curves(out / "curves_baseline.csv", base)
        written.append("curves_baseline.csv")
    ckpt.write_json(out / "report.json", report)
    ckpt.write_json(out / "timing.json", timing)
    return written + ["timing.json"]


def _table(out: Path, key: str, results) -> None:
    seeds = results[0].seeds
    header = [key, "median_target_acc"] + [f"seed{s}" for s in seeds]
    _write_csv(out / "table.csv", header, [[r.arm, r.median] + list(r.target_acc) for r in results])


def cmd_ablate(settings, args, out: Path) -> list[str]:
    name, kwargs, config = split_settings(settings)
    arms = args.arms if args.arms is not None else list(ABLATION_ARMS)
    if not arms:
        raise UsageError(f"empty arm list; valid arms: {', '.join(ABLATION_ARMS)}")
    bad = [a for a in arms if a not in ABLATION_ARMS]
    if bad:
        raise UsageError(f"unknown arm {bad[0]!r}; valid arms: {', '.join(ABLATION_ARMS)}")
    results = run_ablation(name, config, settings["seeds"], arms, kwargs, workers=args.workers)
    _table(out, "arm", results)
    report = {
        "schema_version": REPORT_VERSION,
        "command": "ablate",
        "scenario": name,
        "seeds": settings["seeds"],
        "rows": [r.row() for r in results],
    }
    ckpt.write_json(out / "report.json", report)
    return ["table.csv", "report.json"]


def cmd_sweep(settings, args, out: Path) -> list[str]:
    name, kwargs, config = split_settings(settings)
    if not args.values or len(args.values) < 2:
        raise UsageError("sweep needs at least two values")
    results, pretrained = sweep(args.parameter, args.values, name, config, settings["seeds"], kwargs,
                                workers=args.workers)
    digests = [_network_digest(p) for p in pretrained]
    _table(out, "setting", results)
    rows = []
    for value, r in zip(args.values, results):
        row = r.row()
        row["value"] = float(value)
        row["pretrain_digests"] = digests
        rows.append(row)
    report = {
        "schema_version": REPORT_VERSION,
        "command": "sweep",
        "parameter": args.parameter,
        "scenario": name,
        "seeds": settings["seeds"],
        "rows": rows,
    }
    ckpt.write_json(out / "report.json", report)
    return ["table.csv", "report.json"]


def pca_2d(z: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Top-2 principal-component scores of ``z``; returns (scores, components, mean).

    Each component's sign is fixed so its largest-magnitude loading is
    positive, making the output deterministic.
    """
    if z.shape[0] == 0:
        raise ValueError("cannot project an empty dataset")
    mean = z.mean(axis=0)
    _, _, vt = np.linalg.svd(z - mean, full_matrices=False)
    comps = vt[:2]
    for i in range(comps.shape[0]):
        if comps[i, np.argmax(np.abs(comps[i]))] < 0:
            comps[i] = -comps[i]
    scores = (z - mean) @ comps.T
    if scores.shape[1] < 2:
        scores = np.column_stack([scores, np.zeros(z.shape[0])])
    return scores, comps, mean


def centroid_gap(scores: np.ndarray, labels: np.ndarray, domain: np.ndarray) -> float:
    """Mean over classes of the distance between source and target class centroids."""
    gaps = []
    for c in np.unique(labels):
        s = scores[(labels == c) & (domain == 0)]
        t = scores[(labels == c) & (domain == 1)]
        if len(s) and len(t):
            gaps.append(float(np.linalg.norm(s.mean(axis=0) - t.mean(axis=0))))
    return float(np.mean(gaps))


def cmd_project(settings, args, out: Path) -> list[str]:
    name, kwargs, config = split_settings(settings)
    sc = make_scenario(name, config.seed, **kwargs)
    params = _load_kind(args.checkpoint, NetworkParams, "network")
    _check_dims(params, sc, args.checkpoint)
    if len(sc.source) == 0 or len(sc.target) == 0:
        raise ValueError("cannot project an empty dataset")
    z = np.vstack([forward_encoder(params, sc.source.features), forward_encoder(params, sc.target.features)])
    scores, _, _ = pca_2d(z)
    # target labels come from the evaluation view and are used for plotting only
    labels = np.concatenate([sc.source.classes, sc.target_eval.classes])
    domain = np.repeat([0, 1], [len(sc.source), len(sc.target)])
    names = np.array(["source", "target"])[domain]
    _write_csv(out / "projection.csv", ["x", "y", "label", "domain"],
               [[float(x), float(y), int(l), d] for (x, y), l, d in zip(scores, labels, names)])
    report = {
        "schema_version": REPORT_VERSION,
        "command": "project",
        "scenario": name,
        "seed": config.seed,
        "centroid_gap": centroid_gap(scores, labels, domain),
        "params_digest": _network_digest(params),
    }
    ckpt.write_json(out / "report.json", report)
    return ["projection.csv", "report.json"]


def cmd_export(settings, args, out: Path) -> list[str]:
    name, kwargs, config = split_settings(settings)
    sc = make_scenario(name, config.seed, **kwargs)
    export_csv(sc.source, out / "source.csv")
    export_csv(sc.target, out / "target.csv")
    export_csv(sc.target_eval, out / "target_eval.csv")
    return ["source.csv", "target.csv", "target_eval.csv"]


HANDLERS = {"pretrain": cmd_pretrain, "adapt": cmd_adapt, "ablate": cmd_ablate, "sweep": cmd_sweep,
            "project": cmd_project, "export": cmd_export}
INPUT_FLAGS = ("checkpoint", "gmm")


# --- manifest and dispatch ---------------------------------------------------


def _command_args(args) -> dict:
    keep = {"arms", "parameter", "values", "baseline", "checkpoint", "gmm"}
    out = {k: v for k, v in vars(args).items() if k in keep and v is not None and v is not False}
    for flag in INPUT_FLAGS:
        if flag in out:
            out[flag] = str(Path(out[flag]).resolve())
    return out


def build_manifest(command: str, settings: dict, args) -> dict:
    inputs = {}
    for flag in INPUT_FLAGS:
        path = getattr(args, flag, None)
        if path:
            try:
                inputs[flag] = {"path": str(Path(path).resolve()), "sha256": sha256_file(path)}
            except OSError as exc:
                raise UsageError(f"cannot read --{flag} {path}: {exc}") from exc
    if getattr(args, "config", None):
        inputs["config"] = {"path": str(args.config), "sha256": sha256_file(args.config)}
    return {
        "format": MANIFEST_FORMAT,
        "format_version": MANIFEST_VERSION,
        "command": command,
        "arguments": _command_args(args),
        "settings": settings,
        "seed": settings["seed"],
        "inputs": inputs,
        "format_versions": {"checkpoint": ckpt.FORMAT_VERSION, "report": REPORT_VERSION, "curves": CURVES_VERSION},
        "outputs": None,
    }


def execute(command: str, settings: dict, args, out_dir) -> list[str]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = build_manifest(command, settings, args)
    ckpt.write_json(out / "manifest.json", manifest)
    written = HANDLERS[command](settings, args, out)
    manifest["outputs"] = written
    ckpt.write_json(out / "manifest.json", manifest)
    return written


def replay(manifest_path, out_dir) -> list[str]:
    """Rerun a command from its manifest, checking that its input files are unchanged."""
    try:
        m = json.loads(Path(manifest_path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read manifest {manifest_path}: {exc}") from exc
    if m.get("format") != MANIFEST_FORMAT or m.get("format_version") != MANIFEST_VERSION:
        raise FormatError(f"{manifest_path}: not a version {MANIFEST_VERSION} {MANIFEST_FORMAT} document")
    if m["command"] not in HANDLERS:
        raise FormatError(f"{manifest_path}: unknown command {m['command']!r}")
    for flag, rec in m.get("inputs", {}).items():
        if flag in INPUT_FLAGS and sha256_file(rec["path"]) != rec["sha256"]:
            raise FormatError(f"input {rec['path']} changed since the manifest was written")
    a = m.get("arguments", {})
    args = argparse.Namespace(arms=a.get("arms"), parameter=a.get("parameter"), values=a.get("values"),
                              baseline=a.get("baseline", False), checkpoint=a.get("checkpoint"), gmm=a.get("gmm"),
                              workers=1, config=None)
    settings = dict(m["settings"])
    return execute(m["command"], settings, args, out_dir)


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--scenario", help=f"one of: {', '.join(SCENARIOS)}")
    p.add_argument("--seed", type=int)
    p.add_argument("--lambda", dest="lam", type=float, help="weight of the cross-entropy terms")
    p.add_argument("--tau", type=float, help="pseudo-sample confidence threshold")
    p.add_argument("--projections", type=int, help="number of SWD projections")
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--iterations", type=int)
    p.add_argument("--term-mask", dest="term_mask", help="four 0/1 characters enabling each objective term")
    p.add_argument("--n", type=int, help="samples per domain")
    p.add_argument("--noise", type=float)
    p.add_argument("--rotation", dest="rotation_deg", type=float, help="target rotation in degrees")
    p.add_argument("--config", help="JSON file of settings")
    p.add_argument("--out-dir", default=".", help="directory for all outputs (default: current)")
    p.add_argument("--workers", type=int, default=1, help="processes for ablate/sweep seeds (default 1)")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="imuda",
        description="Source pretraining and unsupervised target adaptation runs.",
        epilog=f"Settings may also come from {ENV_PREFIX}<NAME> environment variables, e.g. {ENV_PREFIX}SEED=3.",
    )
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    p = sub.add_parser("pretrain", help="train on the source domain and fit the embedding mixture")
    _common(p)
    p = sub.add_parser("adapt", help="generate the pseudo-set and adapt to the target domain")
    _common(p)
    p.add_argument("--checkpoint", help="network checkpoint from pretrain (default: pretrain now)")
    p.add_argument("--gmm", help="mixture checkpoint (default: refit from the network)")
    p.add_argument("--baseline", action="store_true", help="also run plain SWD alignment of source and target")
    for name, helptext in (("ablate", "compare objective variants over several seeds"),
                           ("sweep", "vary lambda or tau over several seeds")):
        p = sub.add_parser(name, help=helptext)
        _common(p)
        p.add_argument("--seeds", nargs="+", type=int, help="default: 0 1 2 3 4")
        if name == "ablate":
            p.add_argument("--arms", nargs="*", help=f"subset of: {', '.join(ABLATION_ARMS)}")
        else:
            p.add_argument("parameter", choices=SWEEP_PARAMETERS)
            p.add_argument("values", nargs="+", type=float)
    p = sub.add_parser("project", help="2-D PCA projection of source and target embeddings")
    _common(p)
    p.add_argument("--checkpoint", required=True, help="network checkpoint")
    p = sub.add_parser("export", help="write the scenario's datasets as CSV")
    _common(p)
    p = sub.add_parser("replay", help="rerun a command from its manifest.json")
    p.add_argument("manifest")
    p.add_argument("--out-dir", default=".")
    p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_usage(sys.stderr)
        print(f"imuda: error: a command is required ({', '.join(COMMANDS + ('replay',))})", file=sys.stderr)
        return 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.command == "replay":
            written = replay(args.manifest, args.out_dir)
        else:
            if args.workers < 1:
                raise UsageError("--workers must be >= 1")
            settings = resolve_settings(args)
            split_settings(settings)  # validate before writing anything
            written = execute(args.command, settings, args, args.out_dir)
    except (UsageError, ConfigError) as exc:
        print(f"imuda: error: {exc}", file=sys.stderr)
        return 2
    except (ImudaError, ValueError, TypeError, OSError) as exc:
        print(f"imuda: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    for name in written:
        print(Path(args.out_dir) / name)
    return 0


if __name__ == "__main__":
    sys.exit(main())
