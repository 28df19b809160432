from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Any

import numpy as np

from ..errors import ConfigError


@dataclass(frozen=True)
class MixtureModel:
    """K weighted full-covariance Gaussian components in D dimensions."""

    weights: np.ndarray  # (K,)
    means: np.ndarray  # (K, D)
    covariances: np.ndarray  # (K, D, D)

    def __post_init__(self) -> None:
        w = np.asarray(self.weights, dtype=float).reshape(-1)
        mu = np.atleast_2d(np.asarray(self.means, dtype=float))
        cov = np.asarray(self.covariances, dtype=float)
        if cov.ndim == 2:
            cov = cov[None]
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", mu)
        object.__setattr__(self, "covariances", cov)
        k, d = mu.shape
        if w.shape != (k,) or cov.shape != (k, d, d):
            raise ValueError(f"inconsistent shapes: weights {w.shape}, means {mu.shape}, covariances {cov.shape}")

    @property
    def k(self) -> int:
        return self.means.shape[0]

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    @cached_property
    def cholesky(self) -> np.ndarray:
        """Lower Cholesky factors of every covariance; raises LinAlgError if one is not PD."""
        return np.linalg.cholesky(self.covariances)

    def check(self, atol: float = 1e-9) -> None:
        """Raise ValueError if the simplex or symmetric-PD invariants are violated."""
        w = self.weights
        if np.any(w < 0) or abs(w.sum() - 1.0) > atol:
            raise ValueError(f"weights not on the simplex: {w}")
        if not np.allclose(self.covariances, np.swapaxes(self.covariances, 1, 2), rtol=0, atol=atol):
            raise ValueError("covariance not symmetric")
        if np.any(np.linalg.eigvalsh(self.covariances) <= 0):
            raise ValueError("covariance not positive definite")

    def to_dict(self) -> dict[str, Any]:
        return {
            "k": self.k,
            "weights": self.weights.tolist(),
            "means": self.means.tolist(),
            "covariances": self.covariances.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> MixtureModel:
        return cls(np.array(data["weights"]), np.array(data["means"]), np.array(data["covariances"]))


def effective_components(model: MixtureModel, weight_floor: float = 0.01) -> int:
    if not 0 < weight_floor < 1:
        raise ConfigError(f"weight_floor must be in (0, 1), got {weight_floor}")
    return int(np.sum(model.weights >= weight_floor))


@dataclass(frozen=True)
class FitConfig:
    """Settings shared by the EM and variational fitters.

    ``k`` is the fixed component count for EM and the truncation level for
    the variational fit.  ``weight_concentration`` defaults to ``1 / k``.
    The prior fields only affect the variational fit.  The Normal-Wishart
    prior is centred on the data mean with ``D`` degrees of freedom unless
    overridden; its scale is the pooled within-cluster covariance of the
    k-means initialization (``covariance_prior="within"``) or the total
    data covariance (``"total"``), plus ``reg_covar`` on the diagonal.
    """

    k: int = 10
    reg_covar: float = 1e-6
    tol: float = 1e-3
    max_iter: int = 100
    seed: int = 0
    weight_concentration: float | None = None
    n_init: int = 1
    weight_floor: float = 0.01
    mean_precision_prior: float = 1.0
    degrees_of_freedom_prior: float | None = None
    covariance_prior: str = "within"
    merge_moves: bool = True

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ConfigError("k must be >= 1")
        if self.max_iter < 1:
            raise ConfigError("max_iter must be >= 1")
        if not self.tol > 0:
            raise ConfigError("tol must be > 0")
        if self.reg_covar < 0:
            raise ConfigError("reg_covar must be >= 0")
        if self.n_init < 1:
            raise ConfigError("n_init must be >= 1")
        if self.weight_concentration is not None and not self.weight_concentration > 0:
            raise ConfigError("weight_concentration must be > 0")
        if not 0 < self.weight_floor < 1:
            raise ConfigError("weight_floor must be in (0, 1)")
        if self.covariance_prior not in ("within", "total"):
            raise ConfigError("covariance_prior must be 'within' or 'total'")
        if not self.mean_precision_prior > 0:
            raise ConfigError("mean_precision_prior must be > 0")

    @property
    def gamma(self) -> float:
        return self.weight_concentration if self.weight_concentration is not None else 1.0 / self.k

    def replace(self, **changes: Any) -> FitConfig:
        return FitConfig(**{**asdict(self), **changes})


@dataclass
class FitReport:
    iterations: int = 0
    objective_trace: list[float] = field(default_factory=list)
    converged: bool = False
    effective_k: int = 0

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


def save_model(
    path: str | Path,
    model: MixtureModel,
    *,
    user: str,
    config: FitConfig | None = None,
    report: FitReport | None = None,
) -> None:
    payload = {"user": user, **model.to_dict()}
    payload["config"] = asdict(config) if config is not None else None
    payload["fit_report"] = report.to_dict() if report is not None else None
    Path(path).write_text(json.dumps(payload), encoding="utf-8")


def load_model(path: str | Path) -> tuple[str, MixtureModel, dict[str, Any]]:
    """Return ``(user, model, raw_payload)``."""
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    return data["user"], MixtureModel.from_dict(data), data
