"""Seeded Gaussian angle increments and steady-state operating-point samples.

Random numbers come from numpy's PCG64 seeded through ``SeedSequence`` with a
spawn key, which is reproducible across platforms and lets independent
sub-streams (per line, per replication, ...) be derived without coordination.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from pmuopt.jacobian import AngleCovariance, OperatingPoint, angle_covariance, jacobian_full
from pmuopt.netmodel import Network, build_ybus

DEFAULT_SIGMA = 0.01
DEFAULT_DT = 1.0 / 30.0
DEFAULT_SAMPLES = 200


class NotPSDError(np.linalg.LinAlgError):
    pass


@dataclass(frozen=True)
class RandomStream:
    seed: int
    stream_id: int = 0
    path: tuple[int, ...] = ()

    def child(self, *keys: int) -> "RandomStream":
        return RandomStream(self.seed, self.stream_id, self.path + tuple(int(k) for k in keys))

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(self.seed, spawn_key=(self.stream_id, *self.path))
        return np.random.Generator(np.random.PCG64(ss))


@dataclass(frozen=True)
class AngleSampleSet:
    theta: np.ndarray  # (M, N)
    vmag: np.ndarray  # (M, N)
    origin: OperatingPoint
    sigma: float
    dt: float

    def __len__(self):
        return self.theta.shape[0]

    def __iter__(self):
        for th, vm in zip(self.theta, self.vmag):
            yield OperatingPoint(th, vm)


def psd_factor(cov: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    """Symmetric square-root factor ``L`` with ``L @ L.T == cov`` for PSD ``cov``."""
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    cov = 0.5 * (cov + cov.T)
    w, v = np.linalg.eigh(cov)
    scale = max(float(np.max(np.abs(w))), np.finfo(float).tiny) if w.size else 1.0
    if w.size and w.min() < -tol * scale:
        raise NotPSDError(f"covariance is not positive semi-definite (min eigenvalue {w.min():.3e})")
    return v * np.sqrt(np.clip(w, 0.0, None))


def sample_dtheta(cov: AngleCovariance | np.ndarray, stream: RandomStream | np.random.Generator,
                  count: int) -> np.ndarray:
    """``count`` zero-mean Gaussian vectors with covariance ``cov``; shape ``(count, d)``."""
    mat = cov.matrix if isinstance(cov, AngleCovariance) else cov
    factor = psd_factor(mat)
    rng = stream.generator() if isinstance(stream, RandomStream) else stream
    z = rng.standard_normal((count, factor.shape[0]))
    return z @ factor.T


def wrap_angle(theta):
    """Reduce angles to [-pi, pi)."""
    return (np.asarray(theta) + np.pi) % (2 * np.pi) - np.pi


def sample_operating_points(
    net: Network,
    base: OperatingPoint,
    sigma: float = DEFAULT_SIGMA,
    dt: float = DEFAULT_DT,
    m: int = DEFAULT_SAMPLES,
    stream: RandomStream | None = None,
) -> AngleSampleSet:
    """Single-step perturbations of ``base`` drawn from the steady-state angle model."""
    if m < 1:
        raise ValueError("need at least one sample")
    stream = stream or RandomStream(0)
    jac = jacobian_full(build_ybus(net), base, net.reference)
    cov = angle_covariance(jac, sigma, dt)
    dth = sample_dtheta(cov, stream, m)
    ref = net.reference_index
    keep = np.arange(net.n_bus) != ref
    theta = np.tile(base.theta, (m, 1))
    theta[:, keep] = wrap_angle(theta[:, keep] + dth)
    vmag = np.tile(base.vmag, (m, 1))
    return AngleSampleSet(theta, vmag, base, sigma, dt)
