"""Rank-aware pseudoinverse, nullspace projection and the cascade update step."""

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError


@dataclass(frozen=True)
class PinvConfig:
    """Relative singular-value cutoff: sigma_i <= tolerance * sigma_max is zero."""

    tolerance: float = 1e-5

    def __post_init__(self):
        if not self.tolerance > 0:
            raise InvalidInputError(f"pinv tolerance must be > 0, got {self.tolerance}")


DEFAULT_PINV = PinvConfig()


def _as_finite_matrix(M, name="M"):
    M = np.asarray(M, dtype=float)
    if M.ndim != 2:
        raise InvalidInputError(f"{name} must be 2-D, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise InvalidInputError(f"{name} has non-finite entries")
    return M


def truncated_pinv(M, cfg=DEFAULT_PINV):
    """Moore-Penrose pseudoinverse by SVD with a relative rank cutoff."""
    M = _as_finite_matrix(M)
    p, q = M.shape
    if M.size == 0:
        return np.zeros((q, p))
    U, sv, Vt = np.linalg.svd(M, full_matrices=False)
    smax = sv[0]
    if smax == 0.0:
        return np.zeros((q, p))
    keep = sv > cfg.tolerance * smax
    r = int(np.count_nonzero(keep))
    return (Vt[:r].T / sv[:r]) @ U[:, :r].T


def nullspace_projector(M, cfg=DEFAULT_PINV):
    """Orthogonal projector I - M^+ M onto the nullspace of M."""
    M = _as_finite_matrix(M)
    q = M.shape[1]
    if M.size == 0:
        return np.eye(q)
    _, sv, Vt = np.linalg.svd(M, full_matrices=False)
    if sv[0] == 0.0:
        return np.eye(q)
    r = int(np.count_nonzero(sv > cfg.tolerance * sv[0]))
    V = Vt[:r]
    # I - V_r^T V_r is exactly symmetric, unlike I - pinv(M) @ M
    P = np.eye(q) - V.T @ V
    return 0.5 * (P + P.T)


def constrained_step(S, P, d, du, cfg=DEFAULT_PINV):
    """du + (S P)^+ (d - S du): least-squares correction restricted to range(P)."""
    S = _as_finite_matrix(S, "S")
    P = _as_finite_matrix(P, "P")
    d = np.asarray(d, dtype=float)
    du = np.asarray(du, dtype=float)
    q = S.shape[1]
    if S.shape != (q, q) or P.shape != (q, q) or d.shape != (q,) or du.shape != (q,):
        raise InvalidInputError(
            f"shape mismatch: S {S.shape}, P {P.shape}, d {d.shape}, du {du.shape}")
    return du + truncated_pinv(S @ P, cfg) @ (d - S @ du)
