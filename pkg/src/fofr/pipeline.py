"""End-to-end training and application of the score-space regression model.

Training: per-channel mean/covariance smoothing, point-wise standardization,
univariate then multivariate FPCA per side, score projection, and regressor
fitting.  Application: standardize new covariates with the training
parameters, project, map through the regressor, reconstruct on the response
grid and scale back to the original units.
"""

from __future__ import annotations

import contextlib
import hashlib
import json
import logging
from dataclasses import dataclass, field, replace

import numpy as np

from fofr.core import EvalGrid, FunctionalDataset, Interval, ObservationSeries, make_grid
from fofr.errors import (
    ChannelMismatch,
    CorruptArtifact,
    DomainViolation,
    EmptySpectrum,
    FofrError,
    NoOverlap,
    PipelineError,
    VersionMismatch,
)
from fofr.fpca import (
    MultivariateEigenSystem,
    TruncationRule,
    UnivariateEigenSystem,
    fve_table,
    multivariate_fpca,
    project_multivariate,
    project_univariate,
    reconstruct,
    score_covariance,
    select_truncation,
    univariate_fpca,
)
from fofr.regression import (
    FflmParams,
    NetworkParams,
    NetworkSpec,
    TrainConfig,
    count_params,
    fit_fflm,
    forward,
    predict_fflm,
    train_network,
)
from fofr.smoothing import (
    CovarianceSurface,
    KernelSpec,
    MeanFunction,
    StandardizationParams,
    build_standardization,
    resolve_bandwidths,
    smooth_covariance,
    smooth_mean,
    standardize,
    variance_floor,
)

logger = logging.getLogger("fofr")

MODEL_FORMAT_VERSION = "1"


@dataclass(frozen=True)
class PipelineConfig:
    grid_size_s: int = 101
    grid_size_t: int = 101
    kernel_x: KernelSpec = field(default_factory=KernelSpec)
    kernel_y: KernelSpec = field(default_factory=KernelSpec)
    truncation_x: TruncationRule = field(default_factory=TruncationRule)
    truncation_y: TruncationRule = field(default_factory=TruncationRule)
    regressor: str = "nn"  # "nn" or "fflm"
    hidden_widths: tuple = (16,)
    hidden_activation: str = "elu"
    train: TrainConfig = field(default_factory=TrainConfig)
    ridge: float = 0.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "hidden_widths", tuple(self.hidden_widths))
        if self.regressor not in ("nn", "fflm"):
            raise ValueError(f"regressor must be 'nn' or 'fflm', got {self.regressor!r}")

    def to_dict(self) -> dict:
        return {
            "grid_size_s": self.grid_size_s,
            "grid_size_t": self.grid_size_t,
            "kernel_x": _kernel_to_dict(self.kernel_x),
            "kernel_y": _kernel_to_dict(self.kernel_y),
            "truncation_x": {"fve_cutoff": self.truncation_x.fve_cutoff,
                             "max_components": self.truncation_x.max_components},
            "truncation_y": {"fve_cutoff": self.truncation_y.fve_cutoff,
                             "max_components": self.truncation_y.max_components},
            "regressor": self.regressor,
            "hidden_widths": list(self.hidden_widths),
            "hidden_activation": self.hidden_activation,
            "train": {
                "epochs": self.train.epochs,
                "batch_size": self.train.batch_size,
                "learning_rate": self.train.learning_rate,
                "optimizer": self.train.optimizer,
                "momentum": self.train.momentum,
                "adam_beta1": self.train.adam_beta1,
                "adam_beta2": self.train.adam_beta2,
                "adam_eps": self.train.adam_eps,
                "early_stop_patience": self.train.early_stop_patience,
                "val_fraction": self.train.val_fraction,
                "seed": self.train.seed,
            },
            "ridge": self.ridge,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        kw = dict(d)
        if "kernel_x" in kw:
            kw["kernel_x"] = _kernel_from_dict(kw["kernel_x"])
        if "kernel_y" in kw:
            kw["kernel_y"] = _kernel_from_dict(kw["kernel_y"])
        if "truncation_x" in kw:
            kw["truncation_x"] = TruncationRule(**kw["truncation_x"])
        if "truncation_y" in kw:
            kw["truncation_y"] = TruncationRule(**kw["truncation_y"])
        if "train" in kw:
            kw["train"] = TrainConfig(**kw["train"])
        return cls(**kw)


def _kernel_to_dict(k: KernelSpec) -> dict:
    return {"family": k.family, "bandwidth_mean": k.bandwidth_mean,
            "bandwidth_cov": k.bandwidth_cov}


def _kernel_from_dict(d: dict) -> KernelSpec:
    return KernelSpec(**d)


@dataclass(frozen=True)
class SideModel:
    """Everything FPCA-related for one side (covariates or responses)."""

    grid: EvalGrid
    channel_names: tuple
    standardization: tuple          # per channel StandardizationParams
    univariate: tuple               # per channel UnivariateEigenSystem
    multivariate: MultivariateEigenSystem

    @property
    def n_channels(self) -> int:
        return len(self.channel_names)


@dataclass(frozen=True)
class TrainedModel:
    covariate_side: SideModel
    response_side: SideModel
    regressor_kind: str             # "nn" or "fflm"
    regressor: object               # NetworkParams or FflmParams
    config: dict                    # config snapshot
    format_version: str = MODEL_FORMAT_VERSION

    @property
    def n_inputs(self) -> int:
        return self.covariate_side.multivariate.n_components

    @property
    def n_outputs(self) -> int:
        return self.response_side.multivariate.n_components


@dataclass(frozen=True)
class PredictionSet:
    subject_ids: tuple
    channel_names: tuple
    grid: EvalGrid
    values: np.ndarray  # (N, D, G), original scale

    def series(self, i: int, d: int) -> ObservationSeries:
        return ObservationSeries(self.grid.points, self.values[i, d])


@dataclass(frozen=True)
class MetricsReport:
    channel_names: tuple
    rmse: tuple        # mean squared error per point, as printed in the source metric
    rmse_sqrt: tuple   # square root of the above, for conventional comparison
    rmspe: tuple
    n_subjects: int
    n_excluded_rmspe: tuple

    def to_dict(self) -> dict:
        return {
            "n_subjects": self.n_subjects,
            "channels": [
                {"channel": name, "rmse": self.rmse[d], "rmse_sqrt": self.rmse_sqrt[d],
                 "rmspe": self.rmspe[d], "n_excluded_rmspe": self.n_excluded_rmspe[d]}
                for d, name in enumerate(self.channel_names)
            ],
            "mean_rmse": float(np.mean(self.rmse)),
            "mean_rmspe": float(np.mean(self.rmspe)),
        }

    def to_table(self) -> str:
        header = f"{'channel':<12}{'rmse':>14}{'rmse_sqrt':>14}{'rmspe':>14}"
        lines = [header, "-" * len(header)]
        for d, name in enumerate(self.channel_names):
            lines.append(f"{name:<12}{self.rmse[d]:>14.6g}{self.rmse_sqrt[d]:>14.6g}"
                         f"{self.rmspe[d]:>14.6g}")
        return "\n".join(lines)


@contextlib.contextmanager
def _stage(label: str):
    try:
        yield
    except PipelineError:
        raise
    except FofrError as exc:
        raise PipelineError(label, exc) from exc


def _fit_side(channels, names, domain, grid_size, kernel, rule, side_label,
              n_subjects, diagnostics):
    """Smooth, standardize and run FPCA for one side; returns the SideModel
    plus the standardized series (per subject, per channel)."""
    grid = make_grid(domain, grid_size)
    standardizations = []
    univariate_systems = []
    standardized = [[] for _ in range(n_subjects)]
    side_diag = {"channels": {}, "bandwidths": {}}

    for name, series_set in zip(names, channels):
        label = f"{side_label}/channel={name}"
        with _stage(f"smoothing/{label}"):
            resolved = resolve_bandwidths(series_set, kernel, grid)
            side_diag["bandwidths"][name] = {
                "mean": float(resolved.bandwidth_mean),
                "cov": float(resolved.bandwidth_cov),
            }
            mean = smooth_mean(series_set, resolved, grid)
            surface = smooth_covariance(series_set, mean, resolved, grid)
            params = build_standardization(mean, surface)
        standardizations.append(params)
        for i, series in enumerate(series_set):
            standardized[i].append(standardize(series, params))

        # covariance of the standardized process, by rescaling the raw surface
        sd = np.sqrt(params.var_values)
        z_surface = CovarianceSurface(grid, surface.values / np.outer(sd, sd))
        ch_diag = {"variance_floor": variance_floor(np.diag(surface.values)),
                   "n_variance_clipped": int(np.sum(np.diag(surface.values)
                                                    < variance_floor(np.diag(surface.values))))}
        cap = min(n_subjects - 1, grid.size)
        uni_rule = TruncationRule(rule.fve_cutoff,
                                  cap if rule.max_components is None
                                  else min(cap, rule.max_components))
        try:
            with _stage(f"fpca/{label}"):
                system = univariate_fpca(z_surface, uni_rule, channel=name)
        except PipelineError as exc:
            if isinstance(exc.cause, EmptySpectrum):
                logger.warning("%s: empty spectrum; channel contributes no components", label)
                ch_diag["warning"] = "empty spectrum"
                system = UnivariateEigenSystem(grid, np.zeros(0), np.zeros((0, grid.size)), name)
            else:
                raise
        univariate_systems.append(system)
        ch_diag["eigenvalues"] = system.eigenvalues.tolist()
        ch_diag["fve"] = fve_table(system.eigenvalues) if system.n_components else []
        ch_diag["n_components"] = system.n_components
        side_diag["channels"][name] = ch_diag

    p_plus = sum(s.n_components for s in univariate_systems)
    if p_plus == 0:
        raise PipelineError(f"fpca/{side_label}",
                            EmptySpectrum("every channel has an empty spectrum"))

    with _stage(f"fpca/{side_label}/multivariate"):
        scores = np.stack([
            np.concatenate([project_univariate(standardized[i][c], univariate_systems[c])
                            if univariate_systems[c].n_components else np.zeros(0)
                            for c in range(len(names))])
            for i in range(n_subjects)
        ])
        xi = score_covariance(scores)
        cap = min(n_subjects - 1, p_plus)
        multi_rule = TruncationRule(rule.fve_cutoff,
                                    cap if rule.max_components is None
                                    else min(cap, rule.max_components))
        multivariate = multivariate_fpca(univariate_systems, xi, multi_rule)

    side_diag["multivariate_eigenvalues"] = multivariate.eigenvalues.tolist()
    side_diag["multivariate_fve"] = fve_table(multivariate.eigenvalues)
    side_diag["n_components"] = multivariate.n_components
    diagnostics[side_label] = side_diag

    side = SideModel(grid, tuple(names), tuple(standardizations),
                     tuple(univariate_systems), multivariate)
    return side, standardized


def train_pipeline(data: FunctionalDataset, config: PipelineConfig):
    """Train the full model; returns (TrainedModel, diagnostics dict)."""
    if data.responses is None:
        raise PipelineError("input", ChannelMismatch("training data has no responses"))
    diagnostics = {}
    n = data.n_subjects

    cov_channels = [data.covariate_channel(r) for r in range(data.n_covariates)]
    res_channels = [data.response_channel(d) for d in range(data.n_responses)]

    cov_side, cov_z = _fit_side(cov_channels, data.covariate_names, data.covariate_domain,
                                config.grid_size_s, config.kernel_x, config.truncation_x,
                                "covariate", n, diagnostics)
    res_side, res_z = _fit_side(res_channels, data.response_names, data.response_domain,
                                config.grid_size_t, config.kernel_y, config.truncation_y,
                                "response", n, diagnostics)

    with _stage("projection"):
        inputs = np.stack([project_multivariate(cov_z[i], cov_side.multivariate)
                           for i in range(n)])
        targets = np.stack([project_multivariate(res_z[i], res_side.multivariate)
                            for i in range(n)])

    l = cov_side.multivariate.n_components
    p = res_side.multivariate.n_components
    with _stage("regressor"):
        if config.regressor == "fflm":
            regressor = fit_fflm(inputs, targets, config.ridge)
            diagnostics["regressor"] = {"kind": "fflm", "n_params": count_params(regressor)}
        else:
            spec = NetworkSpec(l, config.hidden_widths, p, config.hidden_activation,
                               seed=config.seed)
            train_cfg = replace(config.train, seed=config.seed)
            regressor, log = train_network(spec, train_cfg, inputs, targets)
            diagnostics["regressor"] = {
                "kind": "nn",
                "n_params": count_params(spec),
                "train_loss": log.train_loss,
                "val_loss": log.val_loss,
                "best_epoch": log.best_epoch,
            }
    diagnostics["n_inputs"] = l
    diagnostics["n_outputs"] = p

    model = TrainedModel(cov_side, res_side, config.regressor, regressor,
                         config.to_dict())
    return model, diagnostics


def predict_pipeline(model: TrainedModel, new_data: FunctionalDataset) -> PredictionSet:
    """Apply a trained model to new covariate data."""
    if tuple(new_data.covariate_names) != model.covariate_side.channel_names:
        raise ChannelMismatch(
            f"covariate channels {list(new_data.covariate_names)} do not match the "
            f"model's {list(model.covariate_side.channel_names)}")
    dom = model.covariate_side.grid.interval
    n = new_data.n_subjects
    d_out = model.response_side.n_channels
    g_out = model.response_side.grid.size
    values = np.empty((n, d_out, g_out))
    sds = [np.sqrt(p.var_values) for p in model.response_side.standardization]
    means = [p.mean_values for p in model.response_side.standardization]
    for i in range(n):
        sample_z = []
        for r, params in enumerate(model.covariate_side.standardization):
            series = new_data.covariates[i][r]
            if not dom.contains(series.times):
                raise DomainViolation(
                    f"subject {new_data.subject_ids[i]!r}: covariate times outside "
                    f"the training domain [{dom.lo}, {dom.hi}]")
            sample_z.append(standardize(series, params))
        eta = project_multivariate(sample_z, model.covariate_side.multivariate)
        if model.regressor_kind == "fflm":
            out_scores = predict_fflm(model.regressor, eta)
        else:
            out_scores = forward(model.regressor, eta)
        z_curves = reconstruct(out_scores, model.response_side.multivariate)
        for d in range(d_out):
            values[i, d] = z_curves[d] * sds[d] + means[d]
    return PredictionSet(tuple(new_data.subject_ids),
                         model.response_side.channel_names,
                         model.response_side.grid, values)


def evaluate(predictions: PredictionSet, truth: FunctionalDataset) -> MetricsReport:
    """Per-response error metrics of predictions against observed truth.

    The predicted curve is linearly interpolated from the response grid to
    each truth timestamp.  The first metric is the mean squared error per
    observation (no square root, matching the source convention);
    ``rmse_sqrt`` carries the square-rooted value.
    """
    if truth.responses is None:
        raise NoOverlap("truth dataset has no responses")
    pred_index = {sid: i for i, sid in enumerate(predictions.subject_ids)}
    common = [sid for sid in truth.subject_ids if sid in pred_index]
    if not common:
        raise NoOverlap("no subjects shared between predictions and truth")
    if len(common) < len(truth.subject_ids) or len(common) < len(predictions.subject_ids):
        logger.warning("evaluating %d common subjects (%d truth, %d predicted)",
                       len(common), len(truth.subject_ids), len(predictions.subject_ids))
    name_to_d = {name: d for d, name in enumerate(predictions.channel_names)}
    truth_index = {sid: i for i, sid in enumerate(truth.subject_ids)}

    rmse, rmse_sqrt, rmspe, excluded = [], [], [], []
    for name in predictions.channel_names:
        if name not in truth.response_names:
            raise ChannelMismatch(f"truth lacks predicted channel {name!r}")
        d_truth = truth.response_names.index(name)
        d_pred = name_to_d[name]
        sse, n_obs = 0.0, 0
        ratios, n_zero = [], 0
        for sid in common:
            series = truth.responses[truth_index[sid]][d_truth]
            pred = np.interp(series.times, predictions.grid.points,
                             predictions.values[pred_index[sid], d_pred])
            resid = series.values - pred
            sq = float(np.dot(resid, resid))
            sse += sq
            n_obs += len(series)
            denom = float(np.dot(series.values, series.values))
            if denom == 0.0:
                n_zero += 1
            else:
                ratios.append(sq / denom)
        mse = sse / n_obs
        rmse.append(mse)
        rmse_sqrt.append(float(np.sqrt(mse)))
        rmspe.append(float(np.mean(ratios)) if ratios else 0.0)
        excluded.append(n_zero)
    return MetricsReport(predictions.channel_names, tuple(rmse), tuple(rmse_sqrt),
                         tuple(rmspe), len(common), tuple(excluded))


def split_subjects(dataset: FunctionalDataset, test_fraction: float, seed: int):
    """Seeded subject-level train/test split; returns (train, test) datasets."""
    if not 0.0 < test_fraction < 1.0:
        raise ValueError("test_fraction must lie in (0, 1)")
    n = dataset.n_subjects
    n_test = max(1, int(round(test_fraction * n)))
    if n_test >= n - 1:
        raise ValueError("split leaves fewer than 2 training subjects")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    test_idx = np.sort(perm[:n_test])
    train_idx = np.sort(perm[n_test:])

    def subset(idx):
        return FunctionalDataset(
            covariate_domain=dataset.covariate_domain,
            response_domain=dataset.response_domain,
            covariate_names=dataset.covariate_names,
            response_names=dataset.response_names,
            subject_ids=[dataset.subject_ids[i] for i in idx],
            covariates=[dataset.covariates[i] for i in idx],
            responses=None if dataset.responses is None
            else [dataset.responses[i] for i in idx],
        )

    return subset(train_idx), subset(test_idx)


# --- persistence ---

def _grid_to_dict(grid: EvalGrid) -> dict:
    return {"lo": float(grid.points[0]), "hi": float(grid.points[-1]), "size": grid.size}


def _grid_from_dict(d: dict) -> EvalGrid:
    return make_grid(Interval(d["lo"], d["hi"]), d["size"])


def _side_to_dict(side: SideModel) -> dict:
    return {
        "grid": _grid_to_dict(side.grid),
        "channel_names": list(side.channel_names),
        "mean": [p.mean_values.tolist() for p in side.standardization],
        "variance": [p.var_values.tolist() for p in side.standardization],
        "univariate": [
            {"channel": s.channel,
             "eigenvalues": s.eigenvalues.tolist(),
             "eigenfunctions": s.eigenfunctions.tolist()}
            for s in side.univariate
        ],
        "multivariate": {
            "eigenvalues": side.multivariate.eigenvalues.tolist(),
            "eigenfunctions": side.multivariate.eigenfunctions.tolist(),
            "block_vectors": side.multivariate.block_vectors.tolist(),
            "block_widths": list(side.multivariate.block_widths),
        },
    }


def _side_from_dict(d: dict) -> SideModel:
    grid = _grid_from_dict(d["grid"])
    names = tuple(d["channel_names"])
    standardization = tuple(
        StandardizationParams(grid, np.array(m, dtype=float), np.array(v, dtype=float))
        for m, v in zip(d["mean"], d["variance"]))
    univariate = tuple(
        UnivariateEigenSystem(grid, np.array(u["eigenvalues"], dtype=float),
                              np.array(u["eigenfunctions"], dtype=float).reshape(
                                  len(u["eigenvalues"]), grid.size),
                              u["channel"])
        for u in d["univariate"])
    m = d["multivariate"]
    n_comp = len(m["eigenvalues"])
    multivariate = MultivariateEigenSystem(
        grid,
        np.array(m["eigenvalues"], dtype=float),
        np.array(m["eigenfunctions"], dtype=float).reshape(n_comp, len(names), grid.size),
        np.array(m["block_vectors"], dtype=float).reshape(n_comp, -1),
        tuple(m["block_widths"]))
    return SideModel(grid, names, standardization, univariate, multivariate)


def _regressor_to_dict(kind: str, regressor) -> dict:
    if kind == "fflm":
        return {"kind": "fflm", "B": regressor.B.tolist()}
    return {
        "kind": "nn",
        "hidden_activation": regressor.hidden_activation,
        "weights": [w.tolist() for w in regressor.weights],
        "biases": [b.tolist() for b in regressor.biases],
    }


def _regressor_from_dict(d: dict):
    if d["kind"] == "fflm":
        return "fflm", FflmParams(np.array(d["B"], dtype=float))
    params = NetworkParams(
        [np.array(w, dtype=float) for w in d["weights"]],
        [np.array(b, dtype=float) for b in d["biases"]],
        d["hidden_activation"])
    return "nn", params


def model_to_dict(model: TrainedModel) -> dict:
    payload = {
        "covariate_side": _side_to_dict(model.covariate_side),
        "response_side": _side_to_dict(model.response_side),
        "regressor": _regressor_to_dict(model.regressor_kind, model.regressor),
        "config": model.config,
    }
    canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    checksum = hashlib.sha256(canonical.encode("utf-8")).hexdigest()
    return {"format_version": model.format_version, "checksum": checksum,
            "payload": payload}


def save_model(model: TrainedModel, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(model_to_dict(model), fh, sort_keys=True)
        fh.write("\n")


def load_model(path) -> TrainedModel:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise CorruptArtifact(f"{path}: cannot read model artifact ({exc})") from exc
    if not isinstance(doc, dict) or "payload" not in doc:
        raise CorruptArtifact(f"{path}: not a model artifact")
    version = doc.get("format_version")
    if version != MODEL_FORMAT_VERSION:
        raise VersionMismatch(
            f"{path}: artifact version {version!r}, this build reads {MODEL_FORMAT_VERSION!r}")
    canonical = json.dumps(doc["payload"], sort_keys=True, separators=(",", ":"))
    checksum = hashlib.sha256(canonical.encode("utf-8")).hexdigest()
    if checksum != doc.get("checksum"):
        raise CorruptArtifact(f"{path}: checksum mismatch")
    payload = doc["payload"]
    kind, regressor = _regressor_from_dict(payload["regressor"])
    return TrainedModel(
        covariate_side=_side_from_dict(payload["covariate_side"]),
        response_side=_side_from_dict(payload["response_side"]),
        regressor_kind=kind,
        regressor=regressor,
        config=payload["config"],
    )
