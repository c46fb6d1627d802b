"""Run configuration: JSON schema, validation, and model construction.

A run file is a single JSON object:

    {
      "model": {"kind": "toy" | "linear_gaussian" | "eit", ...},
      "estimator": "dlmc" | "dlmcis" | "mldlmc" | "mldlsc",
      "tol_list": [0.1, 0.05],
      "alpha": 0.05,
      "repetitions": 2,
      "seed": 1234,
      "max_level": 6,
      "output_dir": "runs/out",
      "estimator_options": { ... }          # optional, passed through
    }

Model sections:
  linear_gaussian: "A" (matrix), optional "offset", "prior_mean",
      "prior_var" (per-dimension), "noise_var", "N_e", and optional
      "level_bias" {"eta_w", "Ww", "bw", "eta_s", "Ws", "bs"} wrapping the
      map with planted discretization error.
  toy: no parameters (the built-in synthetic-rate benchmark).
  eit: optional overrides "noise_var", "N_e", "max_level"; geometry and
      materials follow the built-in plate configuration.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .forward_models import (
    EitForwardModel,
    LinearGaussianModel,
    MeshHierarchy,
    NoiseSpec,
    PriorSpec,
    SyntheticLevelModel,
    make_toy_problem,
    four_ply_plate_spec,
)

ESTIMATORS = ("dlmc", "dlmcis", "mldlmc", "mldlsc")
MODEL_KINDS = ("linear_gaussian", "toy", "eit")


@dataclass
class RunConfig:
    model: dict
    estimator: str
    tol_list: list
    alpha: float
    repetitions: int
    seed: int
    max_level: int
    output_dir: str
    estimator_options: dict = field(default_factory=dict)

    @staticmethod
    def from_file(path) -> "RunConfig":
        try:
            with open(path) as fh:
                raw = json.load(fh)
        except FileNotFoundError:
            raise ConfigError("config", f"file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError("config", f"invalid JSON: {exc}") from None
        return RunConfig.from_dict(raw)

    @staticmethod
    def from_dict(raw: dict) -> "RunConfig":
        if not isinstance(raw, dict):
            raise ConfigError("config", "top level must be an object")
        for key in ("model", "estimator", "tol_list", "seed"):
            if key not in raw:
                raise ConfigError(key, "required field is missing")
        model = raw["model"]
        if not isinstance(model, dict) or "kind" not in model:
            raise ConfigError("model.kind", "model must be an object with a 'kind'")
        if model["kind"] not in MODEL_KINDS:
            raise ConfigError("model.kind", f"must be one of {MODEL_KINDS}, got {model['kind']!r}")
        estimator = raw["estimator"]
        if estimator not in ESTIMATORS:
            raise ConfigError("estimator", f"must be one of {ESTIMATORS}, got {estimator!r}")
        tol_list = raw["tol_list"]
        if (
            not isinstance(tol_list, list)
            or not tol_list
            or not all(isinstance(t, (int, float)) and t > 0 for t in tol_list)
        ):
            raise ConfigError("tol_list", "must be a non-empty list of positive numbers")
        alpha = raw.get("alpha", 0.05)
        if not (isinstance(alpha, (int, float)) and 0 < alpha < 1):
            raise ConfigError("alpha", "must lie in (0, 1)")
        repetitions = raw.get("repetitions", 1)
        if not (isinstance(repetitions, int) and repetitions >= 1):
            raise ConfigError("repetitions", "must be an integer >= 1")
        seed = raw["seed"]
        if not (isinstance(seed, int) and seed >= 0):
            raise ConfigError("seed", "must be a non-negative integer")
        max_level = raw.get("max_level", 10)
        if not (isinstance(max_level, int) and max_level >= 0):
            raise ConfigError("max_level", "must be an integer >= 0")
        output_dir = raw.get("output_dir", "eigml-out")
        if not isinstance(output_dir, str) or not output_dir:
            raise ConfigError("output_dir", "must be a non-empty string")
        options = raw.get("estimator_options", {})
        if not isinstance(options, dict):
            raise ConfigError("estimator_options", "must be an object")
        return RunConfig(
            model=model,
            estimator=estimator,
            tol_list=[float(t) for t in tol_list],
            alpha=float(alpha),
            repetitions=repetitions,
            seed=seed,
            max_level=max_level,
            output_dir=output_dir,
            estimator_options=options,
        )


def build_problem(cfg: RunConfig):
    """Instantiate (model, prior, noise, reference) from a config.

    ``reference`` is the closed-form information gain when one exists
    (level-independent linear-Gaussian models), else None.
    """
    kind = cfg.model["kind"]
    if kind == "toy":
        model, prior, noise = make_toy_problem()
        model.max_level = max(model.max_level, cfg.max_level)
        return model, prior, noise, None
    if kind == "linear_gaussian":
        return _build_linear_gaussian(cfg)
    if kind == "eit":
        spec = four_ply_plate_spec()
        if "max_level" in cfg.model:
            spec = _with_max_level(spec, cfg.model["max_level"])
        model = EitForwardModel(spec)
        noise = NoiseSpec.iso(
            float(cfg.model.get("noise_var", 1e-4)),
            q=model.dim_output,
            N_e=int(cfg.model.get("N_e", 1)),
        )
        return model, spec.prior, noise, None
    raise ConfigError("model.kind", f"unhandled kind {kind!r}")


def _with_max_level(spec, max_level):
    from dataclasses import replace

    if not (isinstance(max_level, int) and 0 <= max_level):
        raise ConfigError("model.max_level", "must be an integer >= 0")
    return replace(spec, max_level=max_level)


def _build_linear_gaussian(cfg: RunConfig):
    m = cfg.model
    try:
        A = np.atleast_2d(np.asarray(m["A"], dtype=float))
    except (KeyError, ValueError):
        raise ConfigError("model.A", "linear_gaussian requires a numeric matrix 'A'") from None
    q, d = A.shape
    prior_mean = np.asarray(m.get("prior_mean", [0.0] * d), dtype=float)
    prior_var = np.asarray(m.get("prior_var", [1.0] * d), dtype=float)
    if prior_mean.shape != (d,) or prior_var.shape != (d,) or np.any(prior_var <= 0):
        raise ConfigError("model.prior_var", "prior_mean/prior_var must match dim(theta), var > 0")
    noise_var = float(m.get("noise_var", 1.0))
    if noise_var <= 0:
        raise ConfigError("model.noise_var", "must be positive")
    N_e = int(m.get("N_e", 1))
    if N_e < 1:
        raise ConfigError("model.N_e", "must be >= 1")
    prior = PriorSpec.gaussian(prior_mean, prior_var)
    noise = NoiseSpec.iso(noise_var, q=q, N_e=N_e)
    offset = m.get("offset")
    base = LinearGaussianModel(A, offset=offset, max_level=cfg.max_level)
    reference = None
    if "level_bias" not in m:
        from .forward_models import closed_form_eig

        reference = closed_form_eig(A, np.diag(prior_var), noise_var * np.eye(q), N_e)
        return base, prior, noise, reference
    lb = m["level_bias"]
    hierarchy = MeshHierarchy(
        h0=float(lb.get("h0", 1.0)),
        beta=int(lb.get("beta", 2)),
        gamma=float(lb.get("gamma", 1.0)),
        eta_w=float(lb.get("eta_w", 1.0)),
        eta_s=float(lb.get("eta_s", 1.0)),
    )
    model = SyntheticLevelModel(
        base,
        hierarchy,
        Ww=lb.get("Ww"),
        bw=lb.get("bw"),
        Ws=lb.get("Ws"),
        bs=lb.get("bs"),
        max_level=cfg.max_level,
    )
    return model, prior, noise, reference
