"""Monte Carlo and multifidelity Monte Carlo estimators.

Besides the plain estimators this module builds the modified low-fidelity
models that route high-fidelity inputs through a shared latent space (active
subspaces or autoencoders, each combined with normalizing flows) and runs the
complete pilot -> training -> allocation -> estimation pipelines.
"""

from __future__ import annotations

import contextlib
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Any, Callable

import numpy as np

from .dimred import (
    ActiveSubspace,
    Alignment,
    AnalyticGradient,
    AutoencoderPair,
    FiniteDifferenceGradient,
    PushforwardGradient,
    SurrogateGradient,
    active_subspace,
    align_latents,
    estimate_c_matrix,
    model_as_encoder,
    train_autoencoder,
)
from .distributions import InputLaw, coordinate_laws, sample
from .errors import (
    DataError,
    DegenerateDataError,
    MfshareError,
    ParameterError,
    PlanError,
    ShapeError,
    StageError,
)
from .flows import AnalyticErfBox, AtanhPremap, Composite, FlowTransform, bounded_flow, fit
from .nnet import SearchSpace, TrainConfig, fit_surrogate
from .seeding import derive_seed

log = logging.getLogger(__name__)

GAMMA_MAX = 1e4
CHEBYSHEV_FACTOR = math.sqrt(10.0)
LATENT_MARGIN = 0.05
CSV_COLUMNS = ("method", "qoi", "estimate", "rho", "beta", "n_hf", "n_lf", "halfwidth", "seed")


# --------------------------------------------------------------------------- models


@dataclass
class ModelSpec:
    """Scalar model with its input law and cost relative to the high-fidelity model.

    ``from_hf`` maps high-fidelity inputs to this model's inputs when the two
    parameterizations differ; ``latent_law`` optionally names the exact law
    of the model output (used by closed-form latent flows).
    """

    evaluate: Callable[[np.ndarray], np.ndarray]
    dim: int
    law: InputLaw
    cost: float = 1.0
    gradient: Callable[[np.ndarray], np.ndarray] | None = None
    label: str = "model"
    from_hf: Callable[[np.ndarray], np.ndarray] | None = None
    latent_law: InputLaw | None = None
    diagnostics: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if not self.cost > 0:
            raise ParameterError("model cost ratio must be positive")
        if self.law is not None and self.law.dim != self.dim:
            raise ShapeError(f"{self.label}: law dimension {self.law.dim} != model dimension {self.dim}")

    def __call__(self, X) -> np.ndarray:
        X = np.asarray(X, float)
        X = X[:, None] if X.ndim == 1 and self.dim == 1 else X
        if X.ndim != 2 or X.shape[1] != self.dim:
            raise ShapeError(f"{self.label}: expected inputs of dimension {self.dim}, got {X.shape}")
        y = np.asarray(self.evaluate(X), float).reshape(-1)
        if y.shape[0] != X.shape[0]:
            raise ShapeError(f"{self.label}: model returned {y.shape[0]} values for {X.shape[0]} inputs")
        bad = np.flatnonzero(~np.isfinite(y))
        if bad.size:
            raise DataError(f"{self.label}: non-finite output at sample index {int(bad[0])}")
        return y

    def inputs_from_hf(self, X_hf) -> np.ndarray:
        X_hf = np.asarray(X_hf, float)
        if self.from_hf is not None:
            return np.asarray(self.from_hf(X_hf), float)
        if X_hf.shape[1] != self.dim:
            raise ShapeError(f"{self.label}: no map from HF inputs of dimension {X_hf.shape[1]}")
        return X_hf

    def on_hf_inputs(self, hf_law: InputLaw) -> "ModelSpec":
        """This model viewed as a function of high-fidelity inputs."""
        if self.from_hf is None and hf_law.dim == self.dim:
            return self
        inner = self

        def evaluate(X):
            return inner(inner.inputs_from_hf(X))

        return ModelSpec(evaluate, hf_law.dim, hf_law, self.cost, None, self.label)


# --------------------------------------------------------------------------- statistics


def pearson(xs, ys) -> float:
    x = np.asarray(xs, float).ravel()
    y = np.asarray(ys, float).ravel()
    if x.size != y.size or x.size < 2:
        raise DataError("pearson needs two vectors of equal length >= 2")
    dx, dy = x - x.mean(), y - y.mean()
    sx, sy = math.sqrt(float(dx @ dx)), math.sqrt(float(dy @ dy))
    if sx == 0.0 or sy == 0.0:
        raise DegenerateDataError("pearson: zero variance")
    return float(np.clip((dx @ dy) / (sx * sy), -1.0, 1.0))


def optimal_beta(pilot_hf, pilot_lf) -> float:
    """``Cov(HF, LF) / Var(LF)`` with ``1/(N-1)`` normalization."""
    a = np.asarray(pilot_hf, float).ravel()
    b = np.asarray(pilot_lf, float).ravel()
    if a.size != b.size or a.size < 2:
        raise DataError("optimal_beta needs paired samples of length >= 2")
    var = np.var(b, ddof=1)
    if var == 0.0:
        raise DegenerateDataError("optimal_beta: zero low-fidelity variance")
    cov = np.sum((a - a.mean()) * (b - b.mean())) / (a.size - 1)
    return float(cov / var)


def variance_reduction_factor(rho: float, w: float) -> float:
    """``sqrt(1 - rho^2) + sqrt(w rho^2)``: MFMC variance relative to MC at equal budget."""
    _check_rho_w(rho, w)
    return math.sqrt(1.0 - rho * rho) + math.sqrt(w * rho * rho)


def variance_reduction_factor_squared(rho: float, w: float) -> float:
    return variance_reduction_factor(rho, w) ** 2


def mfmc_beneficial(rho: float, w: float) -> bool:
    """Guaranteed-benefit test ``|rho| > 4 w / (1 + w)^2``."""
    _check_rho_w(rho, w)
    rhs = 4.0 * w / (1.0 + w) ** 2
    log.debug("mfmc_beneficial: |rho|=%.6g vs 4w/(1+w)^2=%.6g", abs(rho), rhs)
    return abs(rho) > rhs


def _check_rho_w(rho, w):
    if not abs(rho) <= 1.0:
        raise ParameterError("|rho| must not exceed 1")
    if not 0.0 < w <= 1.0:
        raise ParameterError("cost ratio w must lie in (0, 1]")


def chebyshev_halfwidth(sigma: float) -> float:
    """Half-width ``sqrt(10) sigma`` of a distribution-free 90% interval."""
    if sigma < 0:
        raise ParameterError("standard deviation must be non-negative")
    return CHEBYSHEV_FACTOR * float(sigma)


# --------------------------------------------------------------------------- allocation


@dataclass
class AllocationPlan:
    n_hf: int
    n_lf: int
    gamma: float
    budget: float
    w: float
    rho: float = 0.0
    beta: float = 0.0
    capped: bool = False

    def __post_init__(self):
        if self.n_hf < 1 or self.n_lf < self.n_hf:
            raise PlanError(f"invalid plan: n_hf={self.n_hf}, n_lf={self.n_lf}")

    @property
    def uses_lf(self) -> bool:
        return self.n_lf > self.n_hf

    @property
    def cost(self) -> float:
        return self.n_hf + (self.w * self.n_lf if self.uses_lf else 0.0)

    def to_dict(self):
        return asdict(self)


def optimal_allocation(budget: float, w: float, rho: float, beta: float = 0.0) -> AllocationPlan:
    """Sample counts minimizing the MFMC variance for budget ``budget`` (in HF units)."""
    if not budget >= 1:
        raise ParameterError("budget must be at least one HF evaluation")
    if not w > 0:
        raise ParameterError("cost ratio must be positive")
    capped = False
    r2 = rho * rho
    if r2 >= 1.0:
        gamma, capped = GAMMA_MAX, True
    else:
        gamma = math.sqrt(r2 / (w * (1.0 - r2)))
        if gamma > GAMMA_MAX:
            gamma, capped = GAMMA_MAX, True
    if capped:
        log.warning("allocation: gamma capped at %g (rho=%.6g)", GAMMA_MAX, rho)
    n_hf = max(1, int(round(budget / (1.0 + w * gamma))))
    n_lf = max(n_hf, int(round(gamma * n_hf)))
    # rounding may overshoot the budget by more than one LF unit; trim HF samples
    while n_hf > 1 and n_lf > n_hf and n_hf + w * n_lf > budget + w:
        n_hf -= 1
        n_lf = max(n_hf, int(round(gamma * n_hf)))
    if n_hf + w * n_lf > budget + w:
        # a single HF sample is left; clip the LF count to what the budget still pays for
        n_lf = max(n_hf, int(math.floor((budget + w - n_hf) / w + 1e-9)))
    return AllocationPlan(n_hf, n_lf, float(gamma), float(budget), float(w), float(rho), float(beta), capped)


def reuse_pilot_allocation(pilot_n: int, budget: float, w: float, rho: float, beta: float) -> AllocationPlan:
    """Keep the pilot HF evaluations and spend the rest of the budget on LF samples."""
    n_lf = max(pilot_n, int(math.floor((budget - pilot_n) / w + 1e-9))) if budget > pilot_n else pilot_n
    gamma = n_lf / pilot_n
    return AllocationPlan(int(pilot_n), int(n_lf), float(gamma), float(budget), float(w), float(rho), float(beta))


# --------------------------------------------------------------------------- reports


@dataclass
class EstimatorReport:
    method: str
    estimate: float
    beta: float
    rho: float
    n_hf: int
    n_lf: int
    variance: float
    halfwidth: float
    seed: int
    qoi: str = "qoi"
    provenance: dict[str, Any] = field(default_factory=dict)

    @property
    def std(self) -> float:
        return math.sqrt(max(self.variance, 0.0))

    def to_dict(self):
        return asdict(self)

    def csv_row(self) -> list[str]:
        return [self.method, self.qoi, repr(float(self.estimate)), repr(float(self.rho)),
                repr(float(self.beta)), str(self.n_hf), str(self.n_lf), repr(float(self.halfwidth)),
                str(self.seed)]


def mfmc_variance(var_hf: float, var_lf: float, cov: float, beta: float, n_hf: int, n_lf: int) -> float:
    """Exact variance of the two-model MFMC estimator for given moments and counts."""
    d = 1.0 / n_hf - 1.0 / n_lf
    return var_hf / n_hf + beta * beta * var_lf * d - 2.0 * beta * cov * d


def mc_estimate(model: ModelSpec, n: int, seed: int, method: str = "mc") -> EstimatorReport:
    """Plain Monte Carlo mean of ``n`` fresh evaluations."""
    if int(n) < 1:
        raise ParameterError("mc_estimate: n must be >= 1")
    y = model(sample(model.law, int(n), seed).values)
    est = float(np.sum(y) / y.size)
    var = float(np.var(y, ddof=1) / y.size) if y.size > 1 else 0.0
    return EstimatorReport(method, est, 0.0, 0.0, int(n), int(n), var, chebyshev_halfwidth(math.sqrt(var)),
                           int(seed), model.label)


def mfmc_estimate(hf: ModelSpec, lf: ModelSpec, plan: AllocationPlan, seed: int, beta: float | None = None,
                  pilot_moments: tuple[float, float, float] | None = None, method: str = "mfmc",
                  shared_inputs=None, shared_hf=None) -> EstimatorReport:
    """Two-model MFMC estimate; the first ``n_hf`` of the ``n_lf`` inputs are shared.

    ``shared_inputs``/``shared_hf`` let the caller supply already evaluated HF
    samples (pilot reuse); the remaining LF inputs are drawn fresh.
    """
    if plan.n_lf < plan.n_hf:
        raise PlanError("plan has fewer LF than HF samples")
    lf = lf.on_hf_inputs(hf.law)
    beta = plan.beta if beta is None else float(beta)
    n_hf, n_lf = plan.n_hf, plan.n_lf
    if shared_inputs is not None:
        shared_inputs = np.asarray(shared_inputs, float)
        if shared_inputs.shape[0] != n_hf:
            raise PlanError("shared inputs must match n_hf")
        extra = sample(hf.law, n_lf - n_hf, seed).values if n_lf > n_hf else np.empty((0, hf.dim))
        X = np.concatenate([shared_inputs, extra])
        y_hf = np.asarray(shared_hf, float) if shared_hf is not None else hf(shared_inputs)
    else:
        X = sample(hf.law, n_lf, seed).values
        y_hf = hf(X[:n_hf])
    mean_hf = float(np.sum(y_hf) / n_hf)
    if n_lf > n_hf and beta != 0.0:
        y_lf = lf(X)
        correction = float(np.sum(y_lf[:n_hf]) / n_hf - np.sum(y_lf) / n_lf)
    else:
        correction = 0.0
    est = mean_hf - beta * correction
    if pilot_moments is not None:
        var = mfmc_variance(*pilot_moments, beta, n_hf, n_lf)
    else:
        var = float(np.var(y_hf, ddof=1) / n_hf) if n_hf > 1 else 0.0
    var = max(var, 0.0)
    return EstimatorReport(method, float(est), beta, plan.rho, n_hf, n_lf, var,
                           chebyshev_halfwidth(math.sqrt(var)), int(seed), hf.label,
                           {"plan": plan.to_dict()})


# --------------------------------------------------------------------------- modified LF models


def _premap_of(flow: FlowTransform) -> AtanhPremap | None:
    if isinstance(flow, AtanhPremap):
        return flow
    if isinstance(flow, Composite):
        return flow.premap()
    return None


def _safe_forward(flow: FlowTransform, X, diagnostics: dict[str, Any]) -> np.ndarray:
    """Apply ``flow`` after clamping inputs into the premap box; counts clamped entries."""
    pre = _premap_of(flow)
    if pre is not None:
        X, n = pre.clamp(X)
        if n:
            diagnostics["clamped"] = diagnostics.get("clamped", 0) + n
    return flow.transform(X)


def build_lf_as(lf: ModelSpec, T_hf: FlowTransform, T_lf: FlowTransform, as_hf: ActiveSubspace,
                as_lf: ActiveSubspace, hf_law: InputLaw) -> ModelSpec:
    """``Q_LF(T_lf^{-1}(W_lf W_hf^T T_hf(xi)))`` as a model of high-fidelity inputs."""
    if as_hf.r != as_lf.r:
        raise ShapeError("active subspaces disagree on r")
    if T_hf.dim != hf_law.dim or T_lf.dim != lf.dim:
        raise ShapeError("flow dimensions do not match the models")
    diag: dict[str, Any] = {"clamped": 0}

    def evaluate(X):
        x = _safe_forward(T_hf, X, diag)
        z = x @ as_hf.W
        xi_lf = T_lf.inverse(z @ as_lf.W.T)
        return lf(xi_lf)

    return ModelSpec(evaluate, hf_law.dim, hf_law, lf.cost, None, f"{lf.label}_as", diagnostics=diag)


def build_lf_ae(lf: ModelSpec, ae_hf: AutoencoderPair, ae_lf: AutoencoderPair, S_hf: FlowTransform,
                S_lf: FlowTransform, alignment: Alignment | None, hf_law: InputLaw) -> ModelSpec:
    """``Q_LF o D_LF o S_lf^{-1} o align o S_hf o E_hf`` as a model of high-fidelity inputs.

    When ``ae_lf`` is a model-as-encoder pair, ``Q_LF o D_LF`` is the identity
    and the LF latent value is returned directly.
    """
    if ae_hf.r != ae_lf.r:
        raise ShapeError("autoencoders disagree on r")
    diag: dict[str, Any] = {"clamped": 0}

    def evaluate(X):
        z = _safe_forward(S_hf, ae_hf.encode(X), diag)
        if alignment is not None:
            z = alignment.invert(z)
        x_lf = S_lf.inverse(z)
        if ae_lf.model_as_encoder:
            return x_lf[:, 0]
        return lf(ae_lf.decode(x_lf))

    return ModelSpec(evaluate, hf_law.dim, hf_law, lf.cost, None, f"{lf.label}_ae", diagnostics=diag)


# --------------------------------------------------------------------------- pipelines


@dataclass
class PipelineConfig:
    """Knobs shared by the shared-subspace pipelines.

    ``analytic_gradient`` means "use the actual model": exact gradients for
    active subspaces, and the true model (rather than a surrogate) inside
    autoencoder training or as the encoder.
    """

    r: int = 1
    analytic_flow: bool = False
    analytic_gradient: bool = False
    model_as_encoder: bool = False
    reuse_pilot: bool = False
    flow_kind: str = "auto"
    epochs: int = 5000
    flow_epochs: int = 2000
    flow_lr: float = 5e-3
    flow_scheduler: float = 0.9995
    trials: int = 20
    validation_fraction: float = 0.2
    surrogate_activation: str = "relu"
    ae_hidden: tuple[int, ...] = (8, 8)
    gradient: str = "auto"
    fd_step: float = 1e-4
    w: float | None = None

    def __post_init__(self):
        if self.r < 1:
            raise ParameterError("r must be >= 1")
        if self.flow_kind not in ("auto", "spline", "coupling"):
            raise ParameterError(f"unknown flow kind {self.flow_kind!r}")
        if self.gradient not in ("auto", "analytic", "surrogate", "finite_difference"):
            raise ParameterError(f"unknown gradient source {self.gradient!r}")
        if self.model_as_encoder and self.r != 1:
            raise ParameterError("model-as-encoder implies r = 1")

    def to_dict(self):
        d = asdict(self)
        d["ae_hidden"] = list(self.ae_hidden)
        return d


@contextlib.contextmanager
def _stage(name: str):
    try:
        yield
    except StageError:
        raise
    except (MfshareError, ArithmeticError, ValueError, np.linalg.LinAlgError) as exc:
        raise StageError(name, exc) from exc


@dataclass
class _Pilot:
    xi_hf: np.ndarray
    xi_lf: np.ndarray
    y_hf: np.ndarray
    y_lf: np.ndarray


def _draw_pilot(hf: ModelSpec, lf: ModelSpec, n: int, seed: int) -> _Pilot:
    if n < 2:
        raise ParameterError("pilot sample must contain at least two points")
    xi = sample(hf.law, n, derive_seed(seed, "pilot")).values
    xi_lf = lf.inputs_from_hf(xi)
    return _Pilot(xi, xi_lf, hf(xi), lf(xi_lf))


def _search(cfg: PipelineConfig, seed: int, tag: str) -> SearchSpace:
    return SearchSpace(trials=cfg.trials, seed=derive_seed(seed, tag))


def _flow_cfg(cfg: PipelineConfig, seed: int) -> TrainConfig:
    return TrainConfig(cfg.flow_lr, cfg.flow_scheduler, cfg.flow_epochs, "nll", cfg.validation_fraction, seed)


def _law_box(law: InputLaw | None, X: np.ndarray):
    b = law.bounds() if law is not None else None
    if b is not None:
        lo, hi = np.asarray(b[0], float), np.asarray(b[1], float)
        if np.all(np.isfinite(lo)) and np.all(np.isfinite(hi)):
            return lo, hi
    lo, hi = X.min(axis=0), X.max(axis=0)
    pad = LATENT_MARGIN * np.maximum(hi - lo, 1e-12)
    return lo - pad, hi + pad


def _learned_flow(X: np.ndarray, law: InputLaw | None, cfg: PipelineConfig, seed: int, factorizes: bool):
    kind = cfg.flow_kind
    if kind == "auto":
        kind = "spline" if (factorizes or X.shape[1] == 1) else "coupling"
    lo, hi = _law_box(law, X)
    flow = bounded_flow(lo, hi, kind, seed=seed)
    return fit(flow, X, _flow_cfg(cfg, seed))


def _input_flow(model: ModelSpec, X: np.ndarray, cfg: PipelineConfig, seed: int, prov: dict, tag: str):
    if cfg.analytic_flow:
        flow = AnalyticErfBox.for_law(model.law)
        prov[f"flow_{tag}"] = {"type": flow.kind}
        return flow
    factorizes = model.law is not None and coordinate_laws(model.law) is not None
    flow, rep = _learned_flow(X, model.law, cfg, seed, factorizes)
    prov[f"flow_{tag}"] = {"type": flow.kind, "report": rep.to_dict()}
    return flow


def _gradient_source(model: ModelSpec, X, y, cfg: PipelineConfig, seed: int, prov: dict, tag: str):
    kind = cfg.gradient
    if kind == "auto":
        kind = "analytic" if cfg.analytic_gradient else "surrogate"
    if kind == "analytic":
        if model.gradient is None:
            raise ParameterError(f"{model.label} has no analytic gradient")
        prov[f"gradient_{tag}"] = {"type": "analytic"}
        return AnalyticGradient(model.gradient)
    if kind == "finite_difference":
        prov[f"gradient_{tag}"] = {"type": "finite_difference", "h": cfg.fd_step}
        return FiniteDifferenceGradient(model, cfg.fd_step)
    net, res = fit_surrogate(X, y, _search(cfg, seed, f"surrogate_{tag}"), cfg.epochs,
                             cfg.surrogate_activation, cfg.validation_fraction)
    prov[f"gradient_{tag}"] = {"type": "surrogate", "best": res.best_params, "val_loss": res.best_value}
    return SurrogateGradient(net)


def _finish(method: str, hf: ModelSpec, lf_mod: ModelSpec, pilot: _Pilot, budget: float, w: float,
            cfg: PipelineConfig, est_seed: int, prov: dict) -> EstimatorReport:
    with _stage("allocation"):
        y_mod = lf_mod(pilot.xi_hf)
        rho = pearson(pilot.y_hf, y_mod)
        beta = optimal_beta(pilot.y_hf, y_mod)
        moments = (float(np.var(pilot.y_hf, ddof=1)), float(np.var(y_mod, ddof=1)),
                   float(np.cov(pilot.y_hf, y_mod, ddof=1)[0, 1]))
        n = pilot.xi_hf.shape[0]
        if cfg.reuse_pilot:
            plan = reuse_pilot_allocation(n, budget, w, rho, beta)
        else:
            plan = optimal_allocation(budget, w, rho, beta)
        warnings = list(prov.get("warnings", []))
        if n < 10:
            warnings.append("pilot sample below 10 points; beta may be unstable")
        prov["warnings"] = warnings
        prov["rho_original"] = pearson(pilot.y_hf, pilot.y_lf)
        prov["variance_factor"] = variance_reduction_factor(rho, min(w, 1.0))
        prov["variance_factor_squared"] = variance_reduction_factor_squared(rho, min(w, 1.0))
        prov["beneficial"] = mfmc_beneficial(rho, min(w, 1.0))
    with _stage("estimate"):
        if cfg.reuse_pilot:
            rep = mfmc_estimate(hf, lf_mod, plan, est_seed, beta, moments, method,
                                shared_inputs=pilot.xi_hf, shared_hf=pilot.y_hf)
        else:
            rep = mfmc_estimate(hf, lf_mod, plan, est_seed, beta, moments, method)
    prov["clamped"] = int(lf_mod.diagnostics.get("clamped", 0))
    prov["plan"] = plan.to_dict()
    prov["pilot_rho"] = rho
    rep.provenance = prov
    return rep


def _cost_ratio(hf: ModelSpec, lf: ModelSpec, cfg: PipelineConfig | None) -> float:
    if cfg is not None and cfg.w is not None:
        return float(cfg.w)
    return float(lf.cost / hf.cost)


def pipeline_mc(hf: ModelSpec, budget: float, seed: int) -> EstimatorReport:
    """Plain MC with the whole budget spent on HF samples."""
    return mc_estimate(hf, max(1, int(math.floor(budget / hf.cost + 1e-9))), seed, "mc")


def pipeline_mfmc(hf: ModelSpec, lf: ModelSpec, pilot_n: int, budget: float, seed: int,
                  config: PipelineConfig | None = None, estimate_seed: int | None = None) -> EstimatorReport:
    """Standard MFMC with the original LF model evaluated on mapped HF inputs."""
    cfg = config or PipelineConfig()
    est_seed = derive_seed(seed, "estimate") if estimate_seed is None else int(estimate_seed)
    with _stage("pilot"):
        pilot = _draw_pilot(hf, lf, pilot_n, seed)
    prov = {"pipeline": "mfmc", "config": cfg.to_dict(), "seed": int(seed)}
    return _finish("mfmc", hf, lf.on_hf_inputs(hf.law), pilot, budget, _cost_ratio(hf, lf, cfg), cfg,
                   est_seed, prov)


def pipeline_mfmc_as(hf: ModelSpec, lf: ModelSpec, pilot_n: int, budget: float, seed: int,
                     config: PipelineConfig | None = None, estimate_seed: int | None = None) -> EstimatorReport:
    """Shared active subspace pipeline: flows, C matrices, subspaces, modified LF, MFMC."""
    cfg = config or PipelineConfig()
    est_seed = derive_seed(seed, "estimate") if estimate_seed is None else int(estimate_seed)
    prov: dict[str, Any] = {"pipeline": "mfmc_as", "config": cfg.to_dict(), "seed": int(seed)}
    with _stage("pilot"):
        pilot = _draw_pilot(hf, lf, pilot_n, seed)
        if cfg.r > min(hf.dim, lf.dim):
            raise ParameterError(f"r={cfg.r} exceeds the smaller input dimension")
    with _stage("surrogate"):
        g_hf = _gradient_source(hf, pilot.xi_hf, pilot.y_hf, cfg, derive_seed(seed, "grad_hf"), prov, "hf")
        g_lf = _gradient_source(lf, pilot.xi_lf, pilot.y_lf, cfg, derive_seed(seed, "grad_lf"), prov, "lf")
    with _stage("flow"):
        T_hf = _input_flow(hf, pilot.xi_hf, cfg, derive_seed(seed, "flow_hf"), prov, "hf")
        T_lf = _input_flow(lf, pilot.xi_lf, cfg, derive_seed(seed, "flow_lf"), prov, "lf")
    with _stage("subspace"):
        C_hf = estimate_c_matrix(PushforwardGradient(g_hf, T_hf), pilot.xi_hf)
        C_lf = estimate_c_matrix(PushforwardGradient(g_lf, T_lf), pilot.xi_lf)
        as_hf = active_subspace(C_hf, cfg.r, {"n": int(pilot_n)})
        as_lf = active_subspace(C_lf, cfg.r, {"n": int(pilot_n)})
        z_hf = T_hf.transform(pilot.xi_hf) @ as_hf.W
        z_lf = _safe_forward(T_lf, pilot.xi_lf, {}) @ as_lf.W
        for j in range(cfg.r):
            if np.sum((z_hf[:, j] - z_hf[:, j].mean()) * (z_lf[:, j] - z_lf[:, j].mean())) < 0:
                as_lf = as_lf.flip(j)
        prov["C_hf"], prov["C_lf"] = C_hf.tolist(), C_lf.tolist()
        prov["W_hf"], prov["W_lf"] = as_hf.W.tolist(), as_lf.W.tolist()
        prov["eigenvalues_hf"], prov["eigenvalues_lf"] = as_hf.eigenvalues.tolist(), as_lf.eigenvalues.tolist()
    with _stage("model"):
        lf_mod = build_lf_as(lf, T_hf, T_lf, as_hf, as_lf, hf.law)
    return _finish("mfmc_as", hf, lf_mod, pilot, budget, _cost_ratio(hf, lf, cfg), cfg, est_seed, prov)


def _latent_flow(X: np.ndarray, latent_law: InputLaw | None, cfg: PipelineConfig, seed: int,
                 prov: dict, tag: str):
    if cfg.analytic_flow and latent_law is not None and X.shape[1] == 1:
        flow = AnalyticErfBox([latent_law])
        prov[f"latent_flow_{tag}"] = {"type": flow.kind}
        return flow
    flow, rep = _learned_flow(X, None, cfg, seed, factorizes=False)
    prov[f"latent_flow_{tag}"] = {"type": flow.kind, "report": rep.to_dict()}
    return flow


def _scalar_for(model: ModelSpec, X, y, cfg: PipelineConfig, seed: int, prov: dict, tag: str):
    """The differentiable scalar model used as encoder or AE training target."""
    if cfg.analytic_gradient:
        prov[f"encoder_model_{tag}"] = "actual"
        if not cfg.model_as_encoder and model.gradient is None:
            raise ParameterError(f"{model.label} has no gradient for autoencoder training")
        return model
    net, res = fit_surrogate(X, y, _search(cfg, seed, f"surrogate_{tag}"), cfg.epochs,
                             cfg.surrogate_activation, cfg.validation_fraction)
    prov[f"encoder_model_{tag}"] = {"type": "surrogate", "best": res.best_params, "val_loss": res.best_value}
    return net


def pipeline_mfmc_ae(hf: ModelSpec, lf: ModelSpec, pilot_n: int, budget: float, seed: int,
                     config: PipelineConfig | None = None, estimate_seed: int | None = None) -> EstimatorReport:
    """Shared autoencoder pipeline: AEs (or model-as-encoder), latent flows, alignment, MFMC."""
    cfg = config or PipelineConfig()
    est_seed = derive_seed(seed, "estimate") if estimate_seed is None else int(estimate_seed)
    prov: dict[str, Any] = {"pipeline": "mfmc_ae", "config": cfg.to_dict(), "seed": int(seed)}
    with _stage("pilot"):
        pilot = _draw_pilot(hf, lf, pilot_n, seed)
        if cfg.r > min(hf.dim, lf.dim):
            raise ParameterError(f"r={cfg.r} exceeds the smaller input dimension")
    with _stage("surrogate"):
        q_hf = _scalar_for(hf, pilot.xi_hf, pilot.y_hf, cfg, derive_seed(seed, "sur_hf"), prov, "hf")
        q_lf = _scalar_for(lf, pilot.xi_lf, pilot.y_lf, cfg, derive_seed(seed, "sur_lf"), prov, "lf")
    with _stage("autoencoder"):
        if cfg.model_as_encoder:
            ae_hf, ae_lf = model_as_encoder(q_hf), model_as_encoder(q_lf)
        else:
            ae_hf = _fit_ae(q_hf, pilot.xi_hf, cfg, derive_seed(seed, "ae_hf"))
            ae_lf = _fit_ae(q_lf, pilot.xi_lf, cfg, derive_seed(seed, "ae_lf"))
            prov["ae_hf"], prov["ae_lf"] = _ae_summary(ae_hf), _ae_summary(ae_lf)
        x_hf = ae_hf.encode(pilot.xi_hf)
        x_lf = ae_lf.encode(pilot.xi_lf)
    with _stage("flow"):
        exact = cfg.model_as_encoder and cfg.analytic_gradient
        S_hf = _latent_flow(x_hf, hf.latent_law if exact else None, cfg, derive_seed(seed, "lflow_hf"), prov, "hf")
        S_lf = _latent_flow(x_lf, lf.latent_law if exact else None, cfg, derive_seed(seed, "lflow_lf"), prov, "lf")
    with _stage("alignment"):
        z_hf = _safe_forward(S_hf, x_hf, {})
        z_lf = _safe_forward(S_lf, x_lf, {})
        alignment = align_latents(z_hf, z_lf)
        prov["alignment"] = alignment.to_dict()
    with _stage("model"):
        lf_mod = build_lf_ae(lf, ae_hf, ae_lf, S_hf, S_lf, alignment, hf.law)
    return _finish("mfmc_ae", hf, lf_mod, pilot, budget, _cost_ratio(hf, lf, cfg), cfg, est_seed, prov)


def _fit_ae(model, X, cfg: PipelineConfig, seed: int) -> AutoencoderPair:
    tc = TrainConfig(1e-3, 1.0, cfg.epochs, "l1", cfg.validation_fraction, seed)
    return train_autoencoder(model, X, cfg.r, tc, SearchSpace(trials=cfg.trials, seed=seed), cfg.ae_hidden)


def _ae_summary(ae: AutoencoderPair) -> dict[str, Any]:
    return {k: v for k, v in ae.report.items() if k != "search"}
