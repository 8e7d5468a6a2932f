"""Command-line entry point: ``ctganru <subcommand> [--config FILE] [flags]``.

Config files use the same YAML grammar as schema files. Precedence, lowest
first: built-in defaults, the config file, command-line flags. A seed is
mandatory; per-stage seeds are derived from it by name (``split``,
``resample``, ``train``, ``mc``) so changing one stage leaves the others alone.

Exit status: 0 on success, 1 for configuration or data faults (one line on
stderr starting with ``error: config:``), 2 for numerical failures such as
separation or a non-finite loss (``error: numerical:`` plus diagnostics).
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import platform
import sys
import zlib
from dataclasses import fields
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .ctgan import CtganConfig
from .evalkit import divergence, joint_density, marginal_histogram, score, score_multiclass
from .exceptions import ConfigError, NumericalError
from .glm import (
    design_from_dataset,
    fit_binary_logit,
    fit_ordered_logit,
    inference_report,
    ordered_probs,
    predict_prob,
)
from .montecarlo import DgpConfig, Scenario, run_grid, simulate, standard_scenarios
from .resampling import METHODS, ResamplePlan, resample
from .tabular import Dataset, dump_schema, load_csv, load_schema, split, write_csv

STREAMS = ("split", "resample", "train", "mc")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def stream_seed(seed: int, name: str) -> int:
    """Independent per-stage seed derived from the global seed and a stream name."""
    return int(np.random.SeedSequence([int(seed), zlib.crc32(name.encode())]).generate_state(1)[0])


# --------------------------------------------------------------------------- config


def _read_yaml(path) -> dict:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    try:
        cfg = yaml.safe_load(p.read_text(encoding="utf-8")) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse {p}: {str(exc).splitlines()[0]}") from None
    if not isinstance(cfg, dict):
        raise ConfigError(f"{p} must hold a mapping at top level")
    return cfg


def _parse_targets(text):
    """``"0=114,1=114"`` or ``"114,114"`` to a dict or list."""
    if text is None or isinstance(text, (dict, list)):
        return text
    parts = [p.strip() for p in str(text).split(",") if p.strip()]
    if all("=" in p for p in parts):
        return {k.strip(): int(v) for k, v in (p.split("=", 1) for p in parts)}
    try:
        return [int(p) for p in parts]
    except ValueError:
        raise ConfigError(f"cannot parse targets {text!r}") from None


def resolve_config(args) -> dict:
    cfg = _read_yaml(args.config) if getattr(args, "config", None) else {}
    for key, val in vars(args).items():
        if key in ("command", "config", "func") or val is None:
            continue
        if key.startswith("ctgan_"):
            cfg.setdefault("ctgan", {})[key[len("ctgan_"):]] = val
        elif key in ("method", "targets", "ru_targets", "k_neighbors", "multiplier", "ratios"):
            cfg.setdefault("resample", {})[key] = val
        else:
            cfg[key] = val
    if cfg.get("seed") is None:
        raise ConfigError("a seed is required (--seed or 'seed' in the config file)")
    try:
        cfg["seed"] = int(cfg["seed"])
    except (TypeError, ValueError):
        raise ConfigError(f"seed must be an integer, got {cfg['seed']!r}") from None
    return cfg


def _require(cfg, *keys):
    for k in keys:
        if cfg.get(k) in (None, ""):
            raise ConfigError(f"missing required setting {k!r}")


def _check_paths(cfg, *keys):
    for k in keys:
        if cfg.get(k) is not None and not Path(cfg[k]).is_file():
            raise ConfigError(f"{k} file not found: {cfg[k]}")


def ctgan_config(cfg, seed) -> CtganConfig:
    d = dict(cfg.get("ctgan") or {})
    names = {f.name for f in fields(CtganConfig)}
    unknown = set(d) - names
    if unknown:
        raise ConfigError(f"unknown ctgan settings: {sorted(unknown)}")
    d["seed"] = seed
    return CtganConfig(**d)


def _resample_plan(cfg, seed, data=None) -> ResamplePlan:
    r = dict(cfg.get("resample") or {})
    method = r.get("method", "none")
    if method not in METHODS:
        raise ConfigError(f"unknown resampling method {method!r}; choose from {list(METHODS)}")
    targets = _parse_targets(r.get("targets"))
    ru_targets = _parse_targets(r.get("ru_targets"))
    if targets is None and r.get("ratios") is not None and data is not None:
        from .resampling import ratio_targets

        ratios = _parse_targets(r["ratios"])
        targets = ratio_targets(data.category_counts(data.schema.label_column), ratios, float(r.get("multiplier", 1.0)))
        targets = [int(t) for t in targets]
    if method != "none" and targets is None:
        raise ConfigError(f"method {method!r} needs 'targets' or 'ratios'")
    return ResamplePlan(
        method=method,
        targets=targets,
        seed=stream_seed(seed, "resample"),
        k_neighbors=int(r.get("k_neighbors", 5)),
        ru_targets=ru_targets,
        ctgan=ctgan_config(cfg, stream_seed(seed, "train")),
    )


def _load_data(cfg):
    """``(dataset, schema)`` from ``data`` + ``schema`` paths or a ``simulate`` DGP block."""
    if cfg.get("simulate"):
        sim = simulate(DgpConfig(**cfg["simulate"]), seed=stream_seed(cfg["seed"], "data"))
        return sim.data, sim.data.schema
    _require(cfg, "data", "schema")
    _check_paths(cfg, "data", "schema")
    schema = load_schema(cfg["schema"])
    return load_csv(cfg["data"], schema), schema


# --------------------------------------------------------------------------- output


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return str(v)


def write_rows(path, rows: list, header=None):
    header = header or (list(rows[0].keys()) if rows else [])
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(r[k]) for k in header] if isinstance(r, dict) else [_fmt(x) for x in r])


def _jsonable(o):
    if isinstance(o, dict):
        return {str(k): _jsonable(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_jsonable(v) for v in o]
    if isinstance(o, np.ndarray):
        return _jsonable(o.tolist())
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, (np.bool_,)):
        return bool(o)
    return o


def write_json(path, obj):
    Path(path).write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _portable(cfg) -> dict:
    """The config minus the output location, so reruns elsewhere hash the same."""
    return {k: v for k, v in cfg.items() if k != "out"}


def config_digest(cfg) -> str:
    return hashlib.sha256(json.dumps(_jsonable(_portable(cfg)), sort_keys=True).encode()).hexdigest()


def write_manifest(out: Path, cfg: dict, command: str, extra=None):
    import scipy
    import sklearn

    seed = cfg["seed"]
    man = {
        "command": command,
        "config": _portable(cfg),
        "config_sha256": config_digest(cfg),
        "seed": seed,
        "stream_seeds": {s: stream_seed(seed, s) for s in STREAMS},
        "versions": {
            "ctganru": __version__,
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "scikit-learn": sklearn.__version__,
            "python": platform.python_version(),
        },
    }
    if extra:
        man.update(extra)
    write_json(out / "manifest.json", man)


def _out_dir(cfg) -> Path:
    _require(cfg, "out")
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    return out


# --------------------------------------------------------------------------- pipeline pieces


def fit_model(data: Dataset, kind: str, features=None):
    if kind == "binary":
        return fit_binary_logit(design_from_dataset(data, features))
    if kind == "ordered":
        return fit_ordered_logit(design_from_dataset(data, features, intercept=False), data.schema.n_classes)
    raise ConfigError(f"unknown model kind {kind!r}; use 'binary' or 'ordered'")


def fit_to_dict(fit, kind, features) -> dict:
    d = {"kind": kind, "names": fit.names, "features": features}
    if kind == "binary":
        d.update(coef=fit.coef.tolist(), intercept=True)
    else:
        d.update(coef=fit.coef.tolist(), thresholds=fit.thresholds.tolist())
    return d


def predict_classes(fitd: dict, data: Dataset, threshold=0.5):
    kind = fitd["kind"]
    X = design_from_dataset(data, fitd.get("features"), intercept=False).X
    if kind == "binary":
        p = predict_prob(_LogitView(np.asarray(fitd["coef"])), X)
        return (p >= threshold).astype(int)
    return np.argmax(ordered_probs(X, fitd["coef"], fitd["thresholds"]), axis=1)


class _LogitView:
    def __init__(self, coef):
        self.intercept_ = float(coef[0])
        self.slopes = coef[1:]


def metrics_for(y_true, y_pred, M):
    if M == 2:
        cm, rep = score(y_true, y_pred, positive_class=1)
        return {"confusion": {"tp": cm.tp, "fp": cm.fp, "fn": cm.fn, "tn": cm.tn}} | rep.to_dict()
    cm, rep = score_multiclass(y_true, y_pred, M)
    return {"confusion": cm.tolist()} | rep.to_dict()


def run_pipeline(cfg: dict, seed: int) -> dict:
    """split, resample, fit, evaluate with all stage seeds derived from ``seed``."""
    c = dict(cfg, seed=seed)
    data, schema = _load_data(c)
    train, test = split(data, float(c.get("train_fraction", 0.7)), stream_seed(seed, "split"))
    train_rs = resample(train, _resample_plan(c, seed, train))
    kind = c.get("model", schema.label_kind)
    fit = fit_model(train_rs, kind, c.get("features"))
    fitd = fit_to_dict(fit, kind, c.get("features"))
    pred = predict_classes(fitd, test, float(c.get("threshold", 0.5)))
    m = metrics_for(test.labels, pred, schema.n_classes)
    m["train_counts"] = train_rs.class_counts()
    return m


# --------------------------------------------------------------------------- subcommands


def cmd_resample(cfg):
    out = _out_dir(cfg)
    data, schema = _load_data(cfg)
    plan = _resample_plan(cfg, cfg["seed"], data)
    result = resample(data, plan)
    write_csv(result, out / "resampled.csv")
    dump_schema(schema, out / "schema.yaml")
    provenance = {
        "method": plan.method,
        "targets": plan.targets,
        "ru_targets": plan.ru_targets,
        "seed": plan.seed,
        "input_counts": data.class_counts(),
        "output_counts": result.class_counts(),
        "config_sha256": config_digest(cfg),
    }
    write_json(out / "resampled.provenance.json", provenance)
    write_manifest(out, cfg, "resample")
    print(" ".join(f"{k}={v}" for k, v in result.class_counts().items()))
    return 0


def cmd_fit(cfg):
    out = _out_dir(cfg)
    data, schema = _load_data(cfg)
    kind = cfg.get("model", schema.label_kind)
    fit = fit_model(data, kind, cfg.get("features"))
    rep = inference_report(fit)
    text = rep.to_text()
    print(text)
    (out / "report.txt").write_text(text + "\n", encoding="utf-8")
    write_rows(out / "coefficients.csv", rep.to_csv_rows(), ["name", "coefficient", "std_error", "z", "p_value", "stars"])
    write_json(out / "fit.json", fit_to_dict(fit, kind, cfg.get("features"))
               | {"loglik": fit.loglik, "null_loglik": fit.null_loglik, "pseudo_r2": fit.mcfadden_r2})
    write_manifest(out, cfg, "fit")
    return 0


def _read_predictions(path):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ConfigError(f"predictions file {path} is empty")
    if "y_true" not in rows[0]:
        raise ConfigError("predictions file needs a 'y_true' column")
    return rows


def cmd_evaluate(cfg):
    out = _out_dir(cfg)
    threshold = float(cfg.get("threshold", 0.5))
    if cfg.get("predictions"):
        _check_paths(cfg, "predictions")
        rows = _read_predictions(cfg["predictions"])
        try:
            y = np.array([int(r["y_true"]) for r in rows])
            if "y_pred" in rows[0]:
                yp = np.array([int(r["y_pred"]) for r in rows])
            elif "prob" in rows[0]:
                yp = (np.array([float(r["prob"]) for r in rows]) >= threshold).astype(int)
            else:
                raise ConfigError("predictions file needs 'y_pred' or 'prob'")
        except ValueError as exc:
            raise ConfigError(f"bad value in predictions file: {exc}") from None
        M = int(cfg.get("n_classes", max(2, int(max(y.max(), yp.max())) + 1)))
    else:
        _require(cfg, "fit")
        _check_paths(cfg, "fit")
        fitd = json.loads(Path(cfg["fit"]).read_text(encoding="utf-8"))
        data, schema = _load_data(cfg)
        y, yp, M = data.labels, predict_classes(fitd, data, threshold), schema.n_classes
    m = metrics_for(y, yp, M) | {"threshold": threshold, "n": int(len(y))}
    write_json(out / "metrics.json", m)
    write_manifest(out, cfg, "evaluate")
    print(f"sensitivity={m['sensitivity']:.4f} specificity={m['specificity']:.4f} g_mean={m['g_mean']:.4f}")
    return 0


def cmd_diagnose(cfg):
    out = _out_dir(cfg)
    _require(cfg, "real", "synthetic", "schema")
    _check_paths(cfg, "real", "synthetic", "schema")
    schema = load_schema(cfg["schema"])
    real, syn = load_csv(cfg["real"], schema), load_csv(cfg["synthetic"], schema)
    bins = int(cfg.get("bins", 30))
    summary = {"marginals": {}, "joints": {}}
    for col in schema.columns:
        g = marginal_histogram(real, syn, col.name, bins)
        keys = g.labels[0] if g.labels[0] is not None else [f"{a!r}..{b!r}" for a, b in zip(g.edges[0][:-1], g.edges[0][1:])]
        write_rows(out / f"hist_{col.name}.csv", [[k, int(a), int(b)] for k, a, b in zip(keys, g.real, g.synthetic)],
                   ["bin", "real", "synthetic"])
        summary["marginals"][col.name] = divergence(g)["tv_distance"]
    pairs = cfg.get("pairs") or [[a.name, b.name] for i, a in enumerate(schema.columns) for b in schema.columns[i + 1:]]
    for a, b in pairs:
        g = joint_density(real, syn, a, b, bins)
        for src, mat in (("real", g.real), ("synthetic", g.synthetic)):
            write_rows(out / f"joint_{a}__{b}_{src}.csv", [list(map(int, r)) for r in mat],
                       [f"{b}[{j}]" for j in range(mat.shape[1])])
        summary["joints"][f"{a}|{b}"] = divergence(g)["tv_distance"]
    write_json(out / "divergence.json", summary)
    write_manifest(out, cfg, "diagnose")
    worst = max(summary["marginals"].items(), key=lambda kv: kv[1])
    print(f"max marginal TV {worst[1]:.4f} ({worst[0]})")
    return 0


def _scenarios_from_cfg(cfg):
    base = ctgan_config(cfg, 0)
    if cfg.get("standard"):
        scen = standard_scenarios(base, train_on=cfg.get("train_on", "full"))
        keep = cfg.get("only")
        return [s for s in scen if not keep or s.name in keep]
    if not cfg.get("scenarios"):
        raise ConfigError("mc-run needs 'scenarios' or 'standard: true'")
    out = []
    for s in cfg["scenarios"]:
        s = dict(s)
        try:
            dgp = DgpConfig(**(s.pop("dgp", {}) or {}))
            ct = s.pop("ctgan", None)
            out.append(Scenario(dgp=dgp, ctgan=CtganConfig(**(base.to_dict() | (ct or {}))), **s))
        except TypeError as exc:
            raise ConfigError(f"bad scenario entry: {exc}") from None
    return out


def cmd_mc_run(cfg):
    out = _out_dir(cfg)
    R = 1000 if cfg.get("full") else int(cfg.get("R", 100))
    scen = _scenarios_from_cfg(cfg)
    base = stream_seed(cfg["seed"], "mc")
    res = run_grid(scen, R, base_seed=base)
    reps, box, table = [], [], []
    for name, s in res.items():
        reps += s.replication_rows()
        box += s.boxplot_table()
        table.append({"scenario": name, "amse": s.amse, "n_ok": len(s.ok), "n_failed": s.n_failed})
    cols = list(dict.fromkeys(k for r in reps for k in r if k not in ("train_counts", "error")))
    cols += ["train_counts", "error"]
    write_rows(out / "replications.csv", [{k: r.get(k, "") for k in cols} for r in reps], cols)
    write_rows(out / "boxplot.csv", box)
    write_rows(out / "amse.csv", table)
    calibrated = {name: {"intercept": s.dgp.intercept, "thresholds": s.dgp.thresholds} for name, s in res.items()}
    write_manifest(out, cfg, "mc-run", {"R": R, "base_seed": base, "calibrated": calibrated})
    for row in table:
        print(f"{row['scenario']}: AMSE={row['amse']:.5f} ok={row['n_ok']} failed={row['n_failed']}")
    return 0


def cmd_seeds_sweep(cfg):
    out = _out_dir(cfg)
    seeds = cfg.get("seeds") or [1, 2, 3, 4]
    if isinstance(seeds, str):
        seeds = [int(s) for s in seeds.split(",") if s.strip()]
    rows = []
    for s in seeds:
        m = run_pipeline(cfg, int(s))
        rows.append({"seed": int(s), "sensitivity": m["sensitivity"], "specificity": m["specificity"], "g_mean": m["g_mean"]})
    metrics = ("sensitivity", "specificity", "g_mean")
    mean = {k: float(np.mean([r[k] for r in rows])) for k in metrics}
    std = {k: float(np.std([r[k] for r in rows], ddof=1)) if len(rows) > 1 else 0.0 for k in metrics}
    table = [{k: _fmt(v) for k, v in r.items()} for r in rows]
    table.append({"seed": "mean±std"} | {k: f"{mean[k]:.3f}±{std[k]:.3f}" for k in metrics})
    write_rows(out / "sweep.csv", table, ["seed", *metrics])
    write_json(out / "sweep.json", {"rows": rows, "mean": mean, "std": std})
    write_manifest(out, cfg, "seeds-sweep", {"seeds": [int(s) for s in seeds]})
    for r in table:
        print(",".join(str(r[k]) for k in ("seed", *metrics)))
    return 0


# --------------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="ctganru", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    def common(sp):
        sp.add_argument("--config", help="YAML config file")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out", help="output directory")

    def data_args(sp):
        sp.add_argument("--data")
        sp.add_argument("--schema")

    def ctgan_args(sp):
        sp.add_argument("--epochs", dest="ctgan_epochs", type=int)
        sp.add_argument("--batch-size", dest="ctgan_batch_size", type=int)

    sp = sub.add_parser("resample", help="rebalance a CSV dataset")
    common(sp), data_args(sp), ctgan_args(sp)
    sp.add_argument("--method", choices=METHODS)
    sp.add_argument("--targets", help="per-class counts, e.g. 0=114,1=114")
    sp.add_argument("--ru-targets", dest="ru_targets")
    sp.add_argument("--ratios", help="class ratios, used with --multiplier when --targets is absent")
    sp.add_argument("--multiplier", type=float)
    sp.add_argument("--k-neighbors", dest="k_neighbors", type=int)
    sp.set_defaults(func=cmd_resample)

    sp = sub.add_parser("fit", help="fit a binary or ordered logit and print the coefficient table")
    common(sp), data_args(sp)
    sp.add_argument("--model", choices=("binary", "ordered"))
    sp.set_defaults(func=cmd_fit)

    sp = sub.add_parser("evaluate", help="confusion counts, sensitivity, specificity, G-mean")
    common(sp), data_args(sp)
    sp.add_argument("--predictions", help="CSV with y_true and y_pred (or prob)")
    sp.add_argument("--fit", help="fit.json written by the fit subcommand")
    sp.add_argument("--threshold", type=float)
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("diagnose", help="real-vs-synthetic histograms, heatmaps and TV distances")
    common(sp)
    sp.add_argument("--real")
    sp.add_argument("--synthetic")
    sp.add_argument("--schema")
    sp.add_argument("--bins", type=int)
    sp.set_defaults(func=cmd_diagnose)

    sp = sub.add_parser("mc-run", help="Monte Carlo parameter-recovery scenarios")
    common(sp), ctgan_args(sp)
    sp.add_argument("--R", dest="R", type=int)
    sp.add_argument("--full", action="store_true", default=None, help="use R = 1000")
    sp.add_argument("--standard", action="store_true", default=None, help="run the built-in scenario set")
    sp.set_defaults(func=cmd_mc_run)

    sp = sub.add_parser("seeds-sweep", help="rerun a split/resample/fit/evaluate pipeline over several seeds")
    common(sp), data_args(sp), ctgan_args(sp)
    sp.add_argument("--seeds", help="comma-separated seed list")
    sp.add_argument("--method", choices=METHODS)
    sp.add_argument("--targets")
    sp.add_argument("--ratios")
    sp.add_argument("--multiplier", type=float)
    sp.add_argument("--model", choices=("binary", "ordered"))
    sp.set_defaults(func=cmd_seeds_sweep)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not getattr(args, "command", None):
            raise ConfigError("a subcommand is required: resample, fit, evaluate, diagnose, mc-run, seeds-sweep")
        if args.command == "seeds-sweep" and args.seed is None:
            args.seed = 0  # each sweep entry supplies its own seed
        cfg = resolve_config(args)
        return args.func(cfg)
    except NumericalError as exc:
        print(f"error: numerical: {type(exc).__name__}: {exc}", file=sys.stderr)
        where = getattr(exc, "where", None) or getattr(exc, "coefficient", None) or getattr(exc, "column", None)
        if where:
            print(f"  at: {where}", file=sys.stderr)
        return 2
    except (ConfigError, OSError) as exc:
        msg = " ".join(str(exc).split())
        print(f"error: config: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
