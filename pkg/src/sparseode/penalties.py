"""Sparsity penalties, the proximal operator and majorization weights.

The proximal operator is the coordinatewise soft threshold

    prox(theta, p, tau) = sign(theta - tau p) * max(0, |theta - tau p| - lam * mu)

followed by projection onto the box constraints (exact for intervals
containing the threshold output).  For the nonconvex penalties (SCAD, MCP)
``mu`` comes from the one-step local linear approximation, i.e. the penalty
derivative at the current iterate divided by lam, so the operator behaves
like an l1 step with coordinate-dependent weights.
"""

from dataclasses import dataclass

import numpy as np

from .errors import SpecificationError

__all__ = [
    "PenaltyConfig",
    "prox_operator",
    "majorize_weights",
    "penalty_term",
    "threshold_weights",
    "lambda_max",
    "default_lambda_path",
    "kkt_residual",
]

_KINDS = ("l1", "l2", "elastic-net", "scad", "mcp", "none")

# conventional defaults; the nonconvex penalty shapes are not pinned elsewhere
SCAD_A = 3.7
MCP_GAMMA = 3.0


@dataclass
class PenaltyConfig:
    kind: str = "l1"
    alpha: float = 0.25  # elastic net mixing weight on the l1 part
    scad_a: float = SCAD_A
    mcp_gamma: float = MCP_GAMMA
    lambda_path: np.ndarray | None = None  # decreasing; None = auto
    penalty_weights: np.ndarray | None = None  # v >= 0, None = ones
    box: tuple | None = None  # (lo, hi) arrays; None = family default
    path_length: int = 50
    path_min_ratio: float = 1e-4

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise SpecificationError(f"unknown penalty kind {self.kind!r}")
        if not 0.0 <= self.alpha <= 1.0:
            raise SpecificationError("elastic net alpha must lie in [0, 1]")
        if self.scad_a <= 2.0:
            raise SpecificationError("SCAD requires a > 2")
        if self.mcp_gamma <= 1.0:
            raise SpecificationError("MCP requires gamma > 1")
        if self.lambda_path is not None:
            path = np.asarray(self.lambda_path, dtype=float)
            if path.ndim != 1 or path.size == 0:
                raise SpecificationError("lambda_path must be a non-empty sequence")
            if path.size > 1 and np.any(np.diff(path) >= 0):
                raise SpecificationError("lambda_path must be strictly decreasing")
            if np.any(path < 0):
                raise SpecificationError("lambda values must be non-negative")
            self.lambda_path = path

    def weights_for(self, p):
        if self.penalty_weights is None:
            return np.ones(p)
        v = np.asarray(self.penalty_weights, dtype=float)
        if v.shape != (p,):
            raise SpecificationError(f"penalty_weights must have length {p}")
        if np.any(v < 0):
            raise SpecificationError("penalty_weights must be non-negative")
        return v

    def box_for(self, field=None, p=None):
        if self.box is not None:
            lo = np.asarray(self.box[0], dtype=float)
            hi = np.asarray(self.box[1], dtype=float)
            return lo, hi
        if field is not None:
            return field.default_box()
        return np.full(p, -np.inf), np.full(p, np.inf)


def prox_operator(theta, grad, tau, lam, mu, box=None):
    """Soft-threshold of the gradient step, then box clipping.

    Thresholds are ``lam * mu`` per coordinate; the support of the output is
    exactly the set {j : |theta_j - tau * grad_j| > lam * mu_j} before the
    box projection.  Total function: no failure modes.
    """
    theta = np.asarray(theta, dtype=float)
    z = theta - tau * np.asarray(grad, dtype=float)
    out = np.sign(z) * np.maximum(0.0, np.abs(z) - lam * np.asarray(mu, dtype=float))
    if box is not None:
        out = np.clip(out, box[0], box[1])
    return out


def majorize_weights(config, lam, theta):
    """Effective per-coordinate l1 weights for the current iterate.

    SCAD and MCP are majorized through their derivative at |theta_j| (local
    linear approximation); l1 and elastic-net weights pass through unchanged.
    """
    p = np.asarray(theta, dtype=float).shape[0]
    v = config.weights_for(p)
    t = np.abs(np.asarray(theta, dtype=float))
    if config.kind in ("l1", "elastic-net"):
        return v
    if config.kind == "scad":
        if lam <= 0:
            return v
        a = config.scad_a
        deriv = np.where(t <= lam, 1.0, np.maximum(0.0, a * lam - t) / ((a - 1.0) * lam))
        return v * deriv
    if config.kind == "mcp":
        if lam <= 0:
            return v
        return v * np.maximum(0.0, 1.0 - t / (config.mcp_gamma * lam))
    raise SpecificationError(f"majorization undefined for penalty kind {config.kind!r}")


def threshold_weights(config, lam, theta):
    """Internal: weights mu such that the prox threshold is lam * mu."""
    p = np.asarray(theta).shape[0]
    v = config.weights_for(p)
    if config.kind == "l1":
        return v
    if config.kind == "elastic-net":
        return v * config.alpha
    if config.kind in ("scad", "mcp"):
        return majorize_weights(config, lam, theta)
    # l2 and none: nothing is thresholded
    return np.zeros(p)


def ridge_factor(config):
    """Coefficient of the quadratic penalty part folded into the smooth term."""
    if config.kind == "l2":
        return 1.0
    if config.kind == "elastic-net":
        return 1.0 - config.alpha
    return 0.0


def penalty_term(config, lam, theta):
    """Total penalty value lam * sum_j v_j pen(theta_j) (SCAD/MCP exact)."""
    theta = np.asarray(theta, dtype=float)
    v = config.weights_for(theta.shape[0])
    t = np.abs(theta)
    kind = config.kind
    if kind == "none" or lam == 0.0:
        return 0.0
    if kind == "l1":
        return lam * float(v @ t)
    if kind == "l2":
        return lam * 0.5 * float(v @ t**2)
    if kind == "elastic-net":
        return lam * float(v @ (config.alpha * t + 0.5 * (1 - config.alpha) * t**2))
    if kind == "scad":
        a = config.scad_a
        inner = lam * t
        mid = (2 * a * lam * t - t**2 - lam**2) / (2 * (a - 1))
        outer = lam**2 * (a + 1) / 2
        val = np.where(t <= lam, inner, np.where(t <= a * lam, mid, outer))
        return float(v @ val)
    if kind == "mcp":
        g = config.mcp_gamma
        inner = lam * t - t**2 / (2 * g)
        outer = 0.5 * g * lam**2
        val = np.where(t <= g * lam, inner, outer)
        return float(v @ val)
    raise SpecificationError(f"unknown penalty kind {kind!r}")


def lambda_max(config, grad_at_zero):
    """Smallest lam for which the all-zero solution is a fixed point.

    For thresholding penalties this is the sup norm of grad / (v * alpha_eff)
    over the penalized coordinates.  Returns 0 when nothing is penalized.
    """
    g = np.abs(np.asarray(grad_at_zero, dtype=float))
    v = config.weights_for(g.shape[0])
    alpha_eff = config.alpha if config.kind == "elastic-net" else 1.0
    if config.kind in ("none", "l2") or alpha_eff == 0.0:
        return 0.0
    mask = v > 0
    if not np.any(mask):
        return 0.0
    return float(np.max(g[mask] / (v[mask] * alpha_eff)))


def default_lambda_path(config, grad_at_zero):
    if config.lambda_path is not None:
        return config.lambda_path
    lmax = lambda_max(config, grad_at_zero)
    if not np.isfinite(lmax) or lmax <= 0:
        return np.array([0.0])
    return np.geomspace(lmax, lmax * config.path_min_ratio, config.path_length)


def kkt_residual(theta, grad, lam, mu, box=None):
    """Sup norm of theta - prox(theta, grad, 1); zero at a stationary point."""
    z = prox_operator(theta, grad, 1.0, lam, mu, box=box)
    return float(np.max(np.abs(np.asarray(theta, dtype=float) - z), initial=0.0))
