"""Command-line interface: synthesize, train, predict, evaluate, inspect.

Exit codes: 0 success, 2 input/config error, 3 pipeline/runtime error.
Every command is deterministic and idempotent on identical inputs.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys

import numpy as np

from fofr.core import load_dataset, load_schema, write_dataset, write_schema
from fofr.errors import (
    AllCandidatesDegenerate,
    BadGridSize,
    BadScenario,
    ChannelCountMismatch,
    ChannelMismatch,
    CorruptArtifact,
    DivergenceDetected,
    DomainViolation,
    DuplicateTimestamp,
    FofrError,
    InsufficientCoverage,
    MalformedRow,
    MissingChannel,
    NoOverlap,
    PipelineError,
    VersionMismatch,
)
from fofr.pipeline import (
    MetricsReport,
    PipelineConfig,
    evaluate as evaluate_predictions,
    load_model,
    predict_pipeline,
    save_model,
    split_subjects,
    train_pipeline,
)
from fofr.synthgen import dataset_schema, generate, load_scenario, save_ground_truth

logger = logging.getLogger("fofr")

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_RUNTIME = 3

PREDICTIONS_HEADER = ["subject_id", "variable_id", "time", "value"]

#: errors attributable to user input or configuration
_INPUT_ERRORS = (MalformedRow, DuplicateTimestamp, DomainViolation, MissingChannel,
                 InsufficientCoverage, BadGridSize, BadScenario)


def _fail(code: int, message: str) -> int:
    print(f"error: {message}", file=sys.stderr)
    return code


def _classify(exc: Exception) -> int:
    if isinstance(exc, _INPUT_ERRORS):
        return EXIT_INPUT
    if isinstance(exc, (FofrError, ValueError, KeyError)):
        return EXIT_RUNTIME
    raise exc


def _load_json(path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def cmd_synth(args) -> int:
    try:
        scenario = load_scenario(args.scenario)
        if args.seed is not None:
            from dataclasses import replace
            scenario = replace(scenario, seed=args.seed)
        dataset, truth = generate(scenario)
    except (OSError, json.JSONDecodeError) as exc:
        return _fail(EXIT_INPUT, f"cannot read scenario: {exc}")
    except FofrError as exc:
        return _fail(_classify(exc), str(exc))

    os.makedirs(args.out_dir, exist_ok=True)
    data_path = os.path.join(args.out_dir, "data.csv")
    schema_path = os.path.join(args.out_dir, "schema.json")
    truth_path = os.path.join(args.out_dir, "ground_truth.json")
    write_dataset(dataset, data_path)
    write_schema(dataset_schema(scenario), schema_path)
    save_ground_truth(truth, truth_path)

    summary = {
        "n_subjects": dataset.n_subjects,
        "covariates": list(dataset.covariate_names),
        "responses": list(dataset.response_names),
        "files": [data_path, schema_path, truth_path],
    }
    if args.json:
        print(json.dumps(summary, sort_keys=True))
    else:
        print(f"wrote {dataset.n_subjects} subjects "
              f"({len(dataset.covariate_names)} covariate, "
              f"{len(dataset.response_names)} response channels) to {args.out_dir}")
    return EXIT_OK


def _build_pipeline_config(cfg: dict, args, grid_size: int) -> PipelineConfig:
    pipe = dict(cfg.get("pipeline", {}))
    pipe.setdefault("grid_size_s", grid_size)
    pipe.setdefault("grid_size_t", grid_size)
    if args.baseline is not None:
        pipe["regressor"] = args.baseline
    if args.seed is not None:
        pipe["seed"] = args.seed
    return PipelineConfig.from_dict(pipe)


def cmd_train(args) -> int:
    try:
        cfg = _load_json(args.config) if args.config else {}
    except (OSError, json.JSONDecodeError) as exc:
        return _fail(EXIT_INPUT, f"cannot read config: {exc}")

    data_path = args.data or cfg.get("data")
    schema_path = args.schema or cfg.get("schema")
    model_out = args.model_out or cfg.get("model_out")
    diagnostics_out = args.diagnostics_out or cfg.get("diagnostics_out")
    if not data_path or not schema_path or not model_out:
        return _fail(EXIT_INPUT, "train needs data, schema and model_out "
                                 "(via --config or flags)")
    paths = [p for p in (data_path, schema_path, model_out, diagnostics_out) if p]
    if len(set(paths)) != len(paths):
        return _fail(EXIT_INPUT, "data, schema and output paths must be distinct")

    try:
        schema = load_schema(schema_path)
        dataset = load_dataset(data_path, schema)
    except OSError as exc:
        return _fail(EXIT_INPUT, f"cannot read input: {exc}")
    except FofrError as exc:
        return _fail(_classify(exc), str(exc))

    split = cfg.get("split")
    if split is not None:
        frac = float(split.get("test_fraction", 0.0))
        if not 0.0 <= frac <= 0.5:
            return _fail(EXIT_INPUT, f"split test_fraction must lie in [0, 0.5], got {frac}")
        if frac > 0:
            try:
                dataset, test_set = split_subjects(dataset, frac, int(split.get("seed", 0)))
            except ValueError as exc:
                return _fail(EXIT_INPUT, str(exc))
            ids_out = split.get("test_ids_out")
            if ids_out:
                with open(ids_out, "w", encoding="utf-8") as fh:
                    fh.write("\n".join(test_set.subject_ids) + "\n")
            data_out = split.get("test_data_out")
            if data_out:
                write_dataset(test_set, data_out)

    try:
        config = _build_pipeline_config(cfg, args, schema.grid_size)
        model, diagnostics = train_pipeline(dataset, config)
    except ValueError as exc:
        return _fail(EXIT_INPUT, f"bad configuration: {exc}")
    except FofrError as exc:
        return _fail(_classify(exc), str(exc))

    save_model(model, model_out)
    if diagnostics_out:
        with open(diagnostics_out, "w", encoding="utf-8") as fh:
            json.dump(diagnostics, fh, sort_keys=True)
            fh.write("\n")
    if args.json:
        print(json.dumps({"model": model_out, "L": diagnostics["n_inputs"],
                          "P": diagnostics["n_outputs"],
                          "regressor": diagnostics["regressor"]["kind"],
                          "n_params": diagnostics["regressor"]["n_params"]},
                         sort_keys=True))
    else:
        print(f"trained {diagnostics['regressor']['kind']} model "
              f"(L={diagnostics['n_inputs']}, P={diagnostics['n_outputs']}, "
              f"{diagnostics['regressor']['n_params']} parameters) -> {model_out}")
    return EXIT_OK


def write_predictions_csv(predictions, path):
    """Long CSV of predicted curves on the response grid; repr-float round-trip."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(PREDICTIONS_HEADER)
        for i, sid in enumerate(predictions.subject_ids):
            for d, name in enumerate(predictions.channel_names):
                for t, v in zip(predictions.grid.points, predictions.values[i, d]):
                    writer.writerow([sid, name, repr(float(t)), repr(float(v))])


def cmd_predict(args) -> int:
    try:
        model = load_model(args.model)
    except FofrError as exc:
        return _fail(EXIT_RUNTIME, str(exc))
    try:
        schema = load_schema(args.schema)
        dataset = load_dataset(args.data, schema)
    except OSError as exc:
        return _fail(EXIT_INPUT, f"cannot read input: {exc}")
    except FofrError as exc:
        return _fail(_classify(exc), str(exc))
    try:
        predictions = predict_pipeline(model, dataset)
    except FofrError as exc:
        return _fail(EXIT_RUNTIME, str(exc))
    write_predictions_csv(predictions, args.out)
    n_rows = len(predictions.subject_ids) * len(predictions.channel_names) * predictions.grid.size
    if args.json:
        print(json.dumps({"out": args.out, "n_rows": n_rows}, sort_keys=True))
    else:
        print(f"wrote {n_rows} prediction rows -> {args.out}")
    return EXIT_OK


def _read_long_csv(path, want_role=None):
    """Parse a 4- or 5-column long CSV into {(subject, variable): (times, values)}.

    5-column files carry a role column; ``want_role`` filters on it.
    """
    table = {}
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header == PREDICTIONS_HEADER:
            has_role = False
        elif header == ["subject_id", "variable_id", "role", "time", "value"]:
            has_role = True
        else:
            raise MalformedRow(f"{path}: unrecognized header {header!r}")
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise MalformedRow(f"{path}:{lineno}: expected {len(header)} fields")
            if has_role:
                sid, var, role, t_raw, v_raw = row
                if want_role is not None and role != want_role:
                    continue
            else:
                sid, var, t_raw, v_raw = row
            try:
                t, v = float(t_raw), float(v_raw)
            except ValueError as exc:
                raise MalformedRow(f"{path}:{lineno}: non-numeric time/value") from exc
            table.setdefault((sid, var), []).append((t, v))
    if not table:
        raise MalformedRow(f"{path}: no usable data rows")
    out = {}
    for key, obs in table.items():
        obs.sort(key=lambda tv: tv[0])
        out[key] = (np.array([t for t, _ in obs]), np.array([v for _, v in obs]))
    return out


def evaluate_csv(pred_path, truth_path) -> MetricsReport:
    """Metrics of a predictions CSV against a truth CSV, no schema needed."""
    pred = _read_long_csv(pred_path)
    truth = _read_long_csv(truth_path, want_role="response")
    pred_channels = sorted({var for _, var in pred})
    truth_channels = {var for _, var in truth}
    missing = [c for c in pred_channels if c not in truth_channels]
    if missing:
        raise ChannelMismatch(f"truth lacks predicted channels {missing}")
    pred_subjects = {sid for sid, _ in pred}
    truth_subjects = sorted({sid for sid, _ in truth})
    common = [sid for sid in truth_subjects if sid in pred_subjects]
    if not common:
        raise NoOverlap("no subjects shared between predictions and truth")
    if len(common) < len(truth_subjects) or len(common) < len(pred_subjects):
        logger.warning("evaluating %d common subjects (%d truth, %d predicted)",
                       len(common), len(truth_subjects), len(pred_subjects))

    rmse, rmse_sqrt, rmspe, excluded = [], [], [], []
    for name in pred_channels:
        sse, n_obs = 0.0, 0
        ratios, n_zero = [], 0
        for sid in common:
            if (sid, name) not in truth or (sid, name) not in pred:
                continue
            tt, tv = truth[(sid, name)]
            pt, pv = pred[(sid, name)]
            interp = np.interp(tt, pt, pv)
            resid = tv - interp
            sq = float(np.dot(resid, resid))
            sse += sq
            n_obs += len(tt)
            denom = float(np.dot(tv, tv))
            if denom == 0.0:
                n_zero += 1
            else:
                ratios.append(sq / denom)
        if n_obs == 0:
            raise NoOverlap(f"channel {name!r}: no overlapping observations")
        mse = sse / n_obs
        rmse.append(mse)
        rmse_sqrt.append(float(np.sqrt(mse)))
        rmspe.append(float(np.mean(ratios)) if ratios else 0.0)
        excluded.append(n_zero)
    return MetricsReport(tuple(pred_channels), tuple(rmse), tuple(rmse_sqrt),
                         tuple(rmspe), len(common), tuple(excluded))


def cmd_evaluate(args) -> int:
    try:
        report = evaluate_csv(args.predictions, args.truth)
    except OSError as exc:
        return _fail(EXIT_INPUT, f"cannot read input: {exc}")
    except FofrError as exc:
        return _fail(_classify(exc), str(exc))
    doc = report.to_dict()
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, sort_keys=True)
            fh.write("\n")
    if args.json:
        print(json.dumps(doc, sort_keys=True))
    else:
        print(report.to_table())
    return EXIT_OK


def fpca_report(model) -> dict:
    def side_report(side):
        channels = []
        for system in side.univariate:
            lam = system.eigenvalues
            total = float(np.sum(lam)) if len(lam) else 0.0
            channels.append({
                "channel": system.channel,
                "eigenvalues": lam.tolist(),
                "fve": (np.cumsum(lam) / total).tolist() if total > 0 else [],
                "n_components": system.n_components,
            })
        lam = side.multivariate.eigenvalues
        return {
            "channels": channels,
            "multivariate_eigenvalues": lam.tolist(),
            "multivariate_fve": (np.cumsum(lam) / float(np.sum(lam))).tolist(),
            "n_components": side.multivariate.n_components,
        }

    return {
        "covariate_side": side_report(model.covariate_side),
        "response_side": side_report(model.response_side),
        "L": model.n_inputs,
        "P": model.n_outputs,
        "regressor": model.regressor_kind,
    }


def _print_fpca_tables(doc: dict):
    for label, key in (("covariate", "covariate_side"), ("response", "response_side")):
        side = doc[key]
        print(f"== {label} side ==")
        for ch in side["channels"]:
            print(f"channel {ch['channel']} ({ch['n_components']} components)")
            print(f"  {'comp':>4}{'eigenvalue':>14}{'fve':>10}")
            for i, (lam, fve) in enumerate(zip(ch["eigenvalues"], ch["fve"]), start=1):
                print(f"  {i:>4}{lam:>14.6g}{fve:>10.4f}")
        print(f"multivariate spectrum ({side['n_components']} components)")
        print(f"  {'comp':>4}{'eigenvalue':>14}{'fve':>10}")
        for i, (lam, fve) in enumerate(zip(side["multivariate_eigenvalues"],
                                           side["multivariate_fve"]), start=1):
            print(f"  {i:>4}{lam:>14.6g}{fve:>10.4f}")
    print(f"selected L={doc['L']}, P={doc['P']}, regressor={doc['regressor']}")


def cmd_fpca_report(args) -> int:
    try:
        model = load_model(args.model)
    except FofrError as exc:
        return _fail(EXIT_RUNTIME, str(exc))
    doc = fpca_report(model)
    if args.json:
        print(json.dumps(doc, sort_keys=True))
    else:
        _print_fpca_tables(doc)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fofr",
        description="Non-linear function-on-function regression for time series")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset from a scenario file")
    p.add_argument("--scenario", required=True, help="scenario JSON file")
    p.add_argument("--out-dir", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    p.add_argument("--json", action="store_true", help="machine-readable summary")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="fit the model on a long-format CSV")
    p.add_argument("--config", default=None, help="run configuration JSON")
    p.add_argument("--data", default=None, help="training CSV (overrides config)")
    p.add_argument("--schema", default=None, help="dataset schema JSON (overrides config)")
    p.add_argument("--model-out", default=None, help="model artifact path (overrides config)")
    p.add_argument("--diagnostics-out", default=None,
                   help="diagnostics JSON path (overrides config)")
    p.add_argument("--baseline", choices=["fflm"], default=None,
                   help="fit the linear baseline instead of the network")
    p.add_argument("--seed", type=int, default=None, help="override the pipeline seed")
    p.add_argument("--json", action="store_true", help="machine-readable summary")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="apply a trained model to new covariates")
    p.add_argument("--model", required=True, help="model artifact path")
    p.add_argument("--data", required=True, help="covariate CSV")
    p.add_argument("--schema", required=True, help="dataset schema JSON")
    p.add_argument("--out", required=True, help="predictions CSV path")
    p.add_argument("--json", action="store_true", help="machine-readable summary")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="score predictions against observed truth")
    p.add_argument("--predictions", required=True, help="predictions CSV (4-column)")
    p.add_argument("--truth", required=True, help="truth CSV (4- or 5-column)")
    p.add_argument("--out", default=None, help="metrics JSON path")
    p.add_argument("--json", action="store_true", help="print metrics as JSON")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("fpca-report", help="eigenvalue and FVE tables of a trained model")
    p.add_argument("--model", required=True, help="model artifact path")
    p.add_argument("--json", action="store_true", help="machine-readable output")
    p.set_defaults(func=cmd_fpca_report)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (PipelineError, ChannelMismatch, ChannelCountMismatch, NoOverlap,
            VersionMismatch, CorruptArtifact, DivergenceDetected,
            AllCandidatesDegenerate) as exc:
        return _fail(EXIT_RUNTIME, str(exc))
    except FofrError as exc:
        return _fail(_classify(exc), str(exc))


if __name__ == "__main__":
    sys.exit(main())
