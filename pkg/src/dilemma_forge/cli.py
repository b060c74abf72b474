"""Command-line front end: ``dilemma-forge <command> --config run.cfg [overrides]``.

Every command reads one flat ``key = value`` config file, applies flag
overrides, writes its outputs atomically into ``out`` together with a
``manifest.json``, and exits with 0 (ok), 2 (config), 3 (data), 4 (model)
or 5 (evaluation). Errors are also printed to stderr as one JSON object.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import platform
import sys
from dataclasses import dataclass
from decimal import Decimal, InvalidOperation
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from . import __version__
from .core import SchemaError
from .forest import ForestConfig, ForestInputError, fit_forest
from .heuristics import HeuristicError, LabelMatrix, apply_all, resolve_suite
from .ingest import (
    KE_STRATEGIES,
    DataError,
    impute_median,
    ke_factorial_design,
    kfold,
    load_ke_csv,
    load_mm_csv,
    load_rankings_csv,
    make_split,
    write_atomic,
)
from .labelmodel import GenerativeConfig, GenerativeFitError, borda_counts, scale_weights
from .metrics import (
    EvaluationError,
    LabelModelConfig,
    accuracy_by_type,
    accuracy_table_csv,
    aggregate,
    conflict_overlap,
    curve_csv,
    density,
    fit_and_predict,
    fmt,
    heuristic_report,
    json_text,
    learning_curve,
    model_accuracy,
    perturbation_matrix,
    perturbation_csv,
)

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_MODEL, EXIT_EVAL = 0, 2, 3, 4, 5
COMMANDS = ("label", "aggregate", "train", "curve", "perturb", "report")

log = logging.getLogger("dilemma_forge")


class ConfigError(ValueError):
    pass


# --- configuration -----------------------------------------------------------

def _bool(v: str) -> bool:
    low = v.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {v!r}")


def _opt_int(v: str) -> Optional[int]:
    return None if v.strip().lower() in ("", "none") else int(v)


def _ints(v: str) -> tuple:
    return tuple(int(x) for x in v.split(",") if x.strip())


def _floats(v: str) -> tuple:
    return tuple(float(x) for x in v.split(",") if x.strip())


def _decimals(v: str) -> tuple:
    try:
        return tuple(Decimal(x.strip()) for x in v.split(",") if x.strip())
    except InvalidOperation:
        raise ValueError(f"expected comma-separated decimals, got {v!r}") from None


def _words(v: str) -> tuple:
    return tuple(x.strip() for x in v.split(",") if x.strip())


def _pairs(v: str) -> tuple:
    out = []
    for item in _words(v):
        a, _, b = item.partition("-")
        out.append((int(a), int(b)))
    return tuple(out)


def _choice(*options) -> Callable[[str], str]:
    def parse(v: str) -> str:
        v = v.strip()
        if v not in options:
            raise ValueError(f"expected one of {', '.join(options)}, got {v!r}")
        return v
    return parse


def _text(v: str) -> str:
    return v.strip()


# key -> (parser, default text)
KEYS = {
    "domain": (_choice("mm", "ke"), "ke"),
    "data": (_text, ""),
    "rankings": (_text, ""),
    "matrix": (_text, ""),
    "suite": (_text, ""),
    "out": (_text, "out"),
    "seed": (int, "0"),
    "session_filter": (_bool, "true"),
    "impute": (_bool, "true"),
    "model": (_choice("majority", "weighted", "generative"), "majority"),
    "tie": (_choice("random", "genweights", "abstain"), "random"),
    "weights": (_decimals, ""),
    "borda": (_decimals, ""),
    "n_strategies": (_opt_int, ""),
    "weight_scaling": (_choice("max", "minmax"), "max"),
    "epsilon": (float, "0.01"),
    "learning_rate": (float, "0.05"),
    "epochs": (int, "500"),
    "gradient_mode": (_choice("exact", "gibbs"), "exact"),
    "gibbs_samples": (int, "200"),
    "burn_in": (int, "50"),
    "correlations": (_pairs, ""),
    "n_trees": (int, "100"),
    "max_depth": (_opt_int, ""),
    "min_samples_split": (int, "2"),
    "bootstrap": (_bool, "true"),
    "n_jobs": (int, "1"),
    "mode": (_choice("supervised", "weak"), "weak"),
    "split": (_floats, "0.8,0.2"),
    "cv_folds": (_opt_int, ""),
    "group_by_respondent": (_bool, "false"),
    "axis": (_choice("rows", "respondents"), "rows"),
    "xs": (_ints, "0"),
    "models": (_words, "supervised"),
    "folds": (int, "5"),
    "seeds": (_ints, "0"),
    "within_split": (_opt_int, ""),
    "save_forest": (_bool, "false"),
}


def parse_config_text(text: str, where: str = "<config>") -> dict:
    raw = {}
    for n, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep:
            raise ConfigError(f"{where}:{n}: expected 'key = value'")
        if key not in KEYS:
            raise ConfigError(f"{where}:{n}: unknown key {key!r}")
        if key in raw:
            raise ConfigError(f"{where}:{n}: key {key!r} given twice")
        raw[key] = value.strip()
    return raw


def resolve_config(raw: dict) -> dict:
    """Fill defaults and parse values; the result maps every known key."""
    out = {}
    for key, (parse, default) in KEYS.items():
        text = raw.get(key, default)
        try:
            out[key] = parse(text)
        except ValueError as exc:
            raise ConfigError(f"bad value for {key!r}: {exc}") from None
    return out


def config_text(raw: dict) -> str:
    """Canonical text form of the raw settings (sorted keys), used for hashing."""
    return "".join(f"{k} = {raw[k]}\n" for k in sorted(raw))


# --- shared steps ------------------------------------------------------------

@dataclass
class Run:
    command: str
    raw: dict
    cfg: dict
    out: Path
    outputs: dict

    def write(self, name: str, text: str) -> None:
        write_atomic(self.out / name, text)
        self.outputs[name] = hashlib.sha256(text.encode("utf-8")).hexdigest()

    def manifest(self) -> str:
        # the output location does not affect results, so it stays out of the hash
        settings = {k: v for k, v in self.raw.items() if k != "out"}
        canon = config_text(settings)
        doc = {
            "command": self.command,
            "config": dict(sorted(settings.items())),
            "config_sha256": hashlib.sha256(canon.encode("utf-8")).hexdigest(),
            "versions": {"dilemma_forge": __version__, "numpy": np.__version__,
                         "python": ".".join(platform.python_version_tuple()[:2])},
            "seeds": {"seed": self.cfg["seed"], "seeds": list(self.cfg["seeds"])},
            "outputs": dict(sorted(self.outputs.items())),
        }
        return json_text(doc)


def _load_dataset(cfg: dict):
    data = cfg["data"]
    if not data:
        raise ConfigError("'data' is required")
    if data == "builtin:ke_factorial":
        return ke_factorial_design()
    path = Path(data)
    if not path.is_file():
        raise DataError(f"data file not found: {data}")
    if cfg["domain"] == "mm":
        d = load_mm_csv(path, session_filter=cfg["session_filter"])
    else:
        d = load_ke_csv(path)
    if len(d) == 0:
        raise DataError("dataset has no scenarios")
    return d


def _suite(cfg: dict):
    ref = cfg["suite"] or f"builtin:{cfg['domain']}"
    try:
        suite = resolve_suite(ref)
    except (OSError, HeuristicError) as exc:
        raise ConfigError(f"cannot load suite {ref!r}: {exc}") from None
    if not suite:
        raise ConfigError(f"suite {ref!r} is empty")
    return suite


def _imputed(d, cfg: dict, fit_on=None):
    if not cfg["impute"] or not d.schema.has_context:
        return d
    return impute_median(d, list(range(len(d))) if fit_on is None else fit_on)


def _weights(cfg: dict, names) -> Optional[tuple]:
    if cfg["weights"]:
        w = cfg["weights"]
    elif cfg["borda"] or cfg["rankings"]:
        if cfg["rankings"]:
            strategies = list(KE_STRATEGIES) if cfg["domain"] == "ke" else list(names)
            path = Path(cfg["rankings"])
            if not path.is_file():
                raise DataError(f"rankings file not found: {path}")
            rankings = load_rankings_csv(path, strategies)
            counts = dict(zip(strategies, borda_counts(rankings, strategies)))
            missing = [n for n in names if n not in counts]
            if missing:
                raise ConfigError(f"no ranked strategy matches heuristics {missing}")
            counts = [Decimal(repr(float(counts[n]))) for n in names]
            n_strat = len(strategies)
        else:
            counts = cfg["borda"]
            n_strat = cfg["n_strategies"] or (len(KE_STRATEGIES) if cfg["domain"] == "ke"
                                              else len(counts))
        try:
            w = tuple(scale_weights(counts, n_strat, cfg["weight_scaling"]))
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
    else:
        return None
    if len(w) != len(names):
        raise ConfigError(f"{len(w)} weights for {len(names)} heuristics")
    return tuple(w)


def _label_config(cfg: dict, names) -> LabelModelConfig:
    gen = GenerativeConfig(epsilon=cfg["epsilon"], learning_rate=cfg["learning_rate"],
                           epochs=cfg["epochs"], gradient_mode=cfg["gradient_mode"],
                           gibbs_samples=cfg["gibbs_samples"], burn_in=cfg["burn_in"],
                           seed=cfg["seed"], correlations=cfg["correlations"])
    weights = _weights(cfg, names)
    if cfg["model"] == "weighted" and weights is None:
        raise ConfigError("model = weighted needs 'weights', 'borda' or 'rankings'")
    return LabelModelConfig(cfg["model"], cfg["tie"], cfg["seed"], weights, gen)


def _forest_config(cfg: dict) -> ForestConfig:
    return ForestConfig(n_trees=cfg["n_trees"], max_depth=cfg["max_depth"],
                        min_samples_split=cfg["min_samples_split"], bootstrap=cfg["bootstrap"],
                        seed=cfg["seed"], n_jobs=cfg["n_jobs"])


def _matrix(cfg: dict, suite=None):
    """Label matrix from ``matrix`` when given, else by applying the suite to ``data``."""
    if cfg["matrix"]:
        path = Path(cfg["matrix"])
        if not path.is_file():
            raise DataError(f"matrix file not found: {path}")
        return LabelMatrix.from_csv(path.read_text(encoding="utf-8")), None
    d = _load_dataset(cfg)
    return apply_all(suite or _suite(cfg), d), d


def _decimal_text(w: Decimal) -> str:
    # at least three places, so 2.10 / 5 prints as 0.420
    return f"{w:.{max(3, -w.as_tuple().exponent)}f}"


def _symbol(code: int) -> str:
    return {1: "F", -1: "S", 0: "-"}[int(code)]


# --- commands ----------------------------------------------------------------

def cmd_label(run: Run) -> None:
    suite = _suite(run.cfg)
    d = _load_dataset(run.cfg)
    L = apply_all(suite, d)
    truth = d.truth_array() if d.has_truth() else None
    run.write("matrix.csv", L.to_csv())
    run.write("heuristics.csv", heuristic_report(L, truth).to_csv())


def cmd_aggregate(run: Run) -> None:
    L, _ = _matrix(run.cfg)
    lcfg = _label_config(run.cfg, L.heuristic_names)
    agg = aggregate(L, lcfg)
    lines = ["scenario_id,label" + (",p_first" if agg.proba is not None else "")]
    for i, sid in enumerate(L.scenario_ids):
        row = f"{sid},{_symbol(agg.labels[i])}"
        if agg.proba is not None:
            row += f",{fmt(agg.proba[i])}"
        lines.append(row)
    run.write("labels.csv", "\n".join(lines) + "\n")
    if lcfg.weights is not None and lcfg.kind == "weighted":
        body = "".join(f"{n},{_decimal_text(w)}\n" if isinstance(w, Decimal) else f"{n},{fmt(w)}\n"
                       for n, w in zip(L.heuristic_names, lcfg.weights))
        run.write("weights.csv", "heuristic,weight\n" + body)
    if agg.model is not None:
        run.write("model.json", agg.model.to_json())
        run.write("weights.csv", heuristic_report(L, model=agg.model).to_csv())


def _split_eval(run: Run, d, L, lcfg, fcfg, model):
    cfg = run.cfg
    if cfg["cv_folds"]:
        pred = np.zeros(len(d), dtype=np.int64)
        per_fold = []
        for train, test in kfold(d, cfg["cv_folds"], cfg["seed"], cfg["group_by_respondent"]):
            dd = _imputed(d, cfg, train)
            p = fit_and_predict(model, dd.subset(train), L.rows(train), dd.subset(test),
                                L.rows(test), lcfg, fcfg)
            pred[test] = p
            per_fold.append(model_accuracy(p, d.subset(test).truth_array()))
        return pred, list(range(len(d))), per_fold
    split = make_split(d, cfg["split"], cfg["seed"], cfg["group_by_respondent"])
    train, test = list(split.train), list(split.test)
    if not test:
        raise EvaluationError("test split is empty")
    dd = _imputed(d, cfg, train)
    pred = fit_and_predict(model, dd.subset(train), L.rows(train), dd.subset(test),
                           L.rows(test), lcfg, fcfg)
    return pred, test, None


def cmd_train(run: Run) -> None:
    cfg = run.cfg
    d = _load_dataset(cfg)
    if not d.has_truth():
        raise EvaluationError("training and evaluation need ground truth on every row")
    suite = _suite(cfg)
    L = apply_all(suite, d)
    lcfg = _label_config(cfg, L.heuristic_names)
    model = "supervised" if cfg["mode"] == "supervised" else f"weak_{cfg['model']}"
    pred, rows, per_fold = _split_eval(run, d, L, lcfg, _forest_config(cfg), model)
    truth = d.subset(rows).truth_array()
    types = d.subset(rows).scenario_types()
    run.write("accuracy.csv", accuracy_table_csv(pred, truth, types))
    doc = {"model": model, "rows": len(rows), "accuracy": float(fmt(model_accuracy(pred, truth))),
           "by_type": {k: float(fmt(v)) for k, v in accuracy_by_type(pred, truth, types).items()}}
    if per_fold is not None:
        doc["folds"] = [float(fmt(a)) for a in per_fold]
        doc["fold_mean"] = float(fmt(np.mean(per_fold)))
    run.write("metrics.json", json_text(doc))
    if cfg["save_forest"]:
        dd = _imputed(d, cfg)
        y = d.truth_array() if model == "supervised" else aggregate(L, lcfg).labels
        keep = np.flatnonzero(y != 0)
        forest = fit_forest(dd.feature_matrix()[keep], y[keep], _forest_config(cfg))
        run.write("forest.json", forest.to_json())


def cmd_curve(run: Run) -> None:
    cfg = run.cfg
    d = _imputed(_load_dataset(cfg), cfg)
    suite = _suite(cfg)
    names = [h.name for h in suite]
    lcfg = _label_config(cfg, names)
    rankings = strategies = None
    if cfg["rankings"] and lcfg.weights is not None:
        strategies = list(KE_STRATEGIES) if cfg["domain"] == "ke" else names
        rankings = load_rankings_csv(cfg["rankings"], strategies)
    points = learning_curve(d, suite, cfg["axis"], cfg["xs"], cfg["models"], lcfg,
                            _forest_config(cfg), folds=cfg["folds"], seeds=cfg["seeds"],
                            within_split=cfg["within_split"], rankings=rankings,
                            strategies=strategies)
    run.write("curve.csv", curve_csv(points))


def cmd_perturb(run: Run) -> None:
    cfg = run.cfg
    d = _load_dataset(cfg)
    if not d.has_truth():
        raise EvaluationError("perturbation needs ground truth on every row")
    L = apply_all(_suite(cfg), d)
    lcfg = _label_config(cfg, L.heuristic_names)
    run.write("perturbation.csv", perturbation_csv(perturbation_matrix(L, d.truth_array(), lcfg)))


def cmd_report(run: Run) -> None:
    cfg = run.cfg
    suite = _suite(cfg)
    L, d = _matrix(cfg, suite)
    truth = d.truth_array() if d is not None and d.has_truth() else None
    gm = None
    if cfg["model"] == "generative":
        gm = aggregate(L, _label_config(cfg, L.heuristic_names)).model
    rep = heuristic_report(L, truth, gm)
    counts, mean = density(L)
    hist = np.bincount(counts, minlength=L.n_heuristics + 1)
    pairs = conflict_overlap(L) if L.n_heuristics >= 2 else {}
    names = L.heuristic_names
    run.write("heuristics.csv", rep.to_csv())
    run.write("density.csv", "votes,rows\n" + "".join(f"{k},{int(c)}\n" for k, c in enumerate(hist)))
    run.write("pairs.csv", "heuristic_a,heuristic_b,overlap,conflict\n" + "".join(
        f"{names[j]},{names[k]},{fmt(o)},{fmt(c)}\n" for (j, k), (o, c) in pairs.items()))
    doc = {**rep.to_dict(),
           "density": {"mean": float(fmt(mean)), "histogram": [int(c) for c in hist]},
           "pairs": [{"a": names[j], "b": names[k], "overlap": float(fmt(o)),
                      "conflict": float(fmt(c))} for (j, k), (o, c) in pairs.items()]}
    run.write("report.json", json_text(doc))


HANDLERS = {"label": cmd_label, "aggregate": cmd_aggregate, "train": cmd_train,
            "curve": cmd_curve, "perturb": cmd_perturb, "report": cmd_report}


# --- entry point -------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="dilemma-forge", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", help="flat key = value config file")
    ap.add_argument("--seed", type=int)
    ap.add_argument("--out")
    ap.add_argument("--model", choices=("majority", "weighted", "generative"))
    ap.add_argument("--tie", choices=("random", "genweights", "abstain"))
    ap.add_argument("--suite", help="rule file or directory, or builtin:mm / builtin:ke")
    ap.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                    help="override any config key (repeatable)")
    return ap


def _error(kind: str, message: str, code: int) -> int:
    sys.stderr.write(json.dumps({"error": kind, "message": message, "exit_code": code},
                                sort_keys=True) + "\n")
    return code


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    try:
        raw = {}
        if args.config:
            try:
                text = Path(args.config).read_text(encoding="utf-8")
            except OSError as exc:
                raise ConfigError(f"cannot read config: {exc}") from None
            raw = parse_config_text(text, args.config)
        for item in args.set:
            key, sep, value = item.partition("=")
            if not sep or key.strip() not in KEYS:
                raise ConfigError(f"bad override {item!r}")
            raw[key.strip()] = value.strip()
        for key in ("seed", "out", "model", "tie", "suite"):
            value = getattr(args, key)
            if value is not None:
                raw[key] = str(value)
        cfg = resolve_config(raw)
        run = Run(args.command, raw, cfg, Path(cfg["out"]), {})
        HANDLERS[args.command](run)
        write_atomic(run.out / "manifest.json", run.manifest())
    except ConfigError as exc:
        return _error("config", str(exc), EXIT_CONFIG)
    except (DataError, SchemaError, ForestInputError, OSError) as exc:
        return _error("data", str(exc), EXIT_DATA)
    except GenerativeFitError as exc:
        return _error("model", str(exc), EXIT_MODEL)
    except EvaluationError as exc:
        return _error("evaluation", str(exc), EXIT_EVAL)
    except ValueError as exc:
        return _error("config", str(exc), EXIT_CONFIG)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
