"""Real-power / voltage-angle Jacobian, its PMU-masked variant and the angle-increment covariance."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from pmuopt.netmodel import AdmittanceMatrix

SINGULAR_COND = 1e12


class SingularJacobianError(np.linalg.LinAlgError):
    pass


@dataclass(frozen=True)
class OperatingPoint:
    theta: np.ndarray
    vmag: np.ndarray

    def __post_init__(self):
        theta = np.asarray(self.theta, dtype=float)
        vmag = np.asarray(self.vmag, dtype=float)
        if theta.shape != vmag.shape:
            raise ValueError("theta and vmag must have equal length")
        if np.any(vmag <= 0):
            raise ValueError("voltage magnitudes must be positive")
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "vmag", vmag)


@dataclass(frozen=True)
class JacobianMatrix:
    matrix: np.ndarray
    bus_order: tuple[int, ...]

    @property
    def dimension(self) -> int:
        return self.matrix.shape[0]


@dataclass(frozen=True)
class AngleCovariance:
    matrix: np.ndarray
    sigma: float
    dt: float


def dp_dtheta(mag: np.ndarray, ang: np.ndarray, theta: np.ndarray, vmag: np.ndarray,
              observed: np.ndarray | None = None) -> np.ndarray:
    """Full N x N matrix of dP_m/dtheta_n, reference bus retained.

    ``theta`` and ``vmag`` may carry leading batch dimensions; the result then
    has shape ``(..., N, N)``. With an ``observed`` bus mask, an off-diagonal
    entry is kept only when both of its buses are observed, a diagonal entry
    sums the kept entries of its row, and rows of unobserved buses are zero.
    """
    theta = np.asarray(theta, dtype=float)
    vmag = np.asarray(vmag, dtype=float)
    diff = theta[..., :, None] - theta[..., None, :] - ang
    d = vmag[..., :, None] * vmag[..., None, :] * mag * np.sin(diff)
    n = d.shape[-1]
    eye = np.eye(n, dtype=bool)
    if observed is None:
        d = np.where(eye, 0.0, d)
        d[..., eye] = -d.sum(axis=-1)
    else:
        observed = np.asarray(observed, dtype=bool)
        keep = observed[:, None] & observed[None, :] & ~eye
        d = np.where(keep, d, 0.0)
        d[..., eye] = np.where(observed, -d.sum(axis=-1), 0.0)
    return d


def _reduce(full: np.ndarray, ref: int) -> np.ndarray:
    keep = np.arange(full.shape[-1]) != ref
    return full[..., keep, :][..., :, keep]


def jacobian_full(ybus: AdmittanceMatrix, op: OperatingPoint, reference: int) -> JacobianMatrix:
    """(N-1) x (N-1) Jacobian at ``op`` with the ``reference`` bus id removed."""
    ref = ybus.bus_ids.index(reference)
    if len(op.theta) != ybus.dimension:
        raise ValueError("operating point and admittance matrix dimensions differ")
    full = dp_dtheta(ybus.magnitude, ybus.angle, op.theta, op.vmag)
    order = tuple(b for b in ybus.bus_ids if b != reference)
    return JacobianMatrix(_reduce(full, ref), order)


def mix_operating_point(base: OperatingPoint, live: OperatingPoint, mask) -> OperatingPoint:
    """Live values where a PMU is installed, static base values elsewhere."""
    mask = np.asarray(mask, dtype=bool)
    return OperatingPoint(
        np.where(mask, live.theta, base.theta),
        np.where(mask, live.vmag, base.vmag),
    )


FILL_MODES = ("zero", "base")


def jacobian_masked(
    ybus: AdmittanceMatrix,
    base: OperatingPoint,
    live: OperatingPoint,
    placement,
    reference: int,
    fill: str = "zero",
) -> JacobianMatrix:
    """Jacobian as computable from a partial PMU deployment.

    ``fill="zero"``: an element needing the angle or magnitude of an
    unobserved bus cannot be computed and is left at zero; diagonals sum only
    the computable elements of their row. ``fill="base"``: unobserved buses
    contribute their static ``base`` values instead.
    """
    mask = placement.mask if hasattr(placement, "mask") else np.asarray(placement, dtype=bool)
    if mask.shape != (ybus.dimension,):
        raise ValueError("placement length must equal the number of buses")
    if fill == "base":
        return jacobian_full(ybus, mix_operating_point(base, live, mask), reference)
    if fill != "zero":
        raise ValueError(f"fill must be one of {FILL_MODES}")
    ref = ybus.bus_ids.index(reference)
    full = dp_dtheta(ybus.magnitude, ybus.angle, live.theta, live.vmag, observed=mask)
    order = tuple(b for b in ybus.bus_ids if b != reference)
    return JacobianMatrix(_reduce(full, ref), order)


def frobenius_norm(m) -> float:
    m = np.asarray(m, dtype=float)
    return float(np.sqrt(np.sum(m * m)))


def angle_covariance(j: JacobianMatrix | np.ndarray, sigma: float, dt: float) -> AngleCovariance:
    """sigma^2 dt (J^T J)^-1, symmetrized."""
    if sigma <= 0 or dt <= 0:
        raise ValueError("sigma and dt must be positive")
    jm = j.matrix if isinstance(j, JacobianMatrix) else np.asarray(j, dtype=float)
    # SVD: cond(J) and the pseudo-inverse in one rank-revealing step
    u, s, vt = np.linalg.svd(jm)
    if s.size == 0 or s[-1] == 0 or s[0] / s[-1] > SINGULAR_COND:
        raise SingularJacobianError("Jacobian is singular (islanded or degenerate operating point)")
    inv_jtj = (vt.T / s**2) @ vt
    cov = sigma**2 * dt * inv_jtj
    return AngleCovariance(0.5 * (cov + cov.T), sigma, dt)
