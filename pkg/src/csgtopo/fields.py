"""Density filter, Heaviside projection, SIMP interpolation and sensitivity back-transformation.

Fields are flat per-element vectors in the mesh's column-major order; the
filter works on their ``(nely, nelx)`` image.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .fem import E0, EMIN


class EtaNewtonWarning(RuntimeWarning):
    """The volume-preserving threshold search did not reach its tolerance."""


@dataclass(frozen=True)
class SimpParams:
    penal: float = 3.0
    e0: float = E0
    emin: float = EMIN


@dataclass(frozen=True)
class FilterKernel:
    """Cone kernel ``max(0, rmin - dist)`` with its padding mode.

    ``bc`` is ``"N"`` (reflective padding, zero-Neumann) or ``"D"`` (zero
    padding). The kernel spans offsets ``-ceil(rmin)+1 .. ceil(rmin)-1``.
    """

    rmin: float
    h: np.ndarray
    hs: np.ndarray
    bc: str
    nely: int
    nelx: int

    @classmethod
    def build(cls, nelx: int, nely: int, rmin: float, bc: str = "N") -> "FilterKernel":
        if bc not in ("N", "D"):
            raise ValueError(f"filter boundary condition must be 'N' or 'D', got {bc!r}")
        if rmin <= 0:
            raise ValueError("filter radius must be positive")
        r = math.ceil(rmin) - 1
        d = np.arange(-r, r + 1)
        dy, dx = np.meshgrid(d, d)
        h = np.maximum(0.0, rmin - np.sqrt(dx**2 + dy**2))
        hs = _correlate(np.ones((nely, nelx)), h, bc)
        return cls(rmin, h, hs, bc, nely, nelx)

    def grid(self, v: np.ndarray) -> np.ndarray:
        return np.reshape(v, (self.nely, self.nelx), order="F")


def _correlate(a: np.ndarray, h: np.ndarray, bc: str) -> np.ndarray:
    # scipy "reflect" is the half-sample symmetric padding (d c b a | a b c d)
    if bc == "N":
        return ndimage.correlate(a, h, mode="reflect")
    return ndimage.correlate(a, h, mode="constant", cval=0.0)


def apply_filter(x: np.ndarray, kernel: FilterKernel) -> np.ndarray:
    out = _correlate(kernel.grid(x), kernel.h, kernel.bc) / kernel.hs
    return np.ravel(out, order="F")


def project(x_tilde: np.ndarray, eta: float, beta: float) -> np.ndarray:
    x_tilde = np.asarray(x_tilde, dtype=float)
    if beta == 0:
        return x_tilde.copy()
    num = np.tanh(beta * eta) + np.tanh(beta * (x_tilde - eta))
    return num / (np.tanh(beta * eta) + np.tanh(beta * (1.0 - eta)))


def project_derivative(x_tilde: np.ndarray, eta: float, beta: float) -> np.ndarray:
    x_tilde = np.asarray(x_tilde, dtype=float)
    if beta == 0:
        return np.ones_like(x_tilde)
    den = np.tanh(beta * eta) + np.tanh(beta * (1.0 - eta))
    return beta * (1.0 - np.tanh(beta * (x_tilde - eta)) ** 2) / den


def project_eta_derivative(x_tilde: np.ndarray, eta: float, beta: float) -> np.ndarray:
    """Derivative of :func:`project` with respect to the threshold ``eta``."""
    v = np.asarray(x_tilde, dtype=float)
    return (-beta / np.sinh(beta) / np.cosh(beta * (v - eta)) ** 2
            * np.sinh(v * beta) * np.sinh((1.0 - v) * beta))


def volume_preserving_eta(x_phys: np.ndarray, eta: float, beta: float, volfrac: float,
                          tol: float = 1e-6, max_iter: int = 100) -> float:
    """Newton search for the threshold that keeps ``mean(project(x_phys))`` at ``volfrac``."""
    f = np.mean(project(x_phys, eta, beta)) - volfrac
    it = 0
    while abs(f) > tol:
        if it == max_iter:
            warnings.warn(f"threshold search stopped after {max_iter} Newton steps "
                          f"(eta={eta:.6g}, volume residual={f:.3e})", EtaNewtonWarning,
                          stacklevel=2)
            break
        slope = np.mean(project_eta_derivative(x_phys, eta, beta))
        if slope == 0 or not np.isfinite(slope):
            warnings.warn("threshold search hit a flat projection", EtaNewtonWarning, stacklevel=2)
            break
        eta = float(np.clip(eta - f / slope, 1e-6, 1.0 - 1e-6))
        f = np.mean(project(x_phys, eta, beta)) - volfrac
        it += 1
    return float(eta)


def simp_interpolate(x_phys: np.ndarray, simp: SimpParams,
                     act: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Element stiffness scales and the *negated* derivative, zero outside ``act``."""
    x_phys = np.asarray(x_phys, dtype=float)
    s_k = simp.emin + x_phys**simp.penal * (simp.e0 - simp.emin)
    ds_k = np.zeros_like(x_phys)
    idx = slice(None) if act is None else act
    ds_k[idx] = -simp.penal * (simp.e0 - simp.emin) * x_phys[idx] ** (simp.penal - 1)
    return s_k, ds_k


def filter_scaling(kernel: FilterKernel, x_tilde: np.ndarray | None = None,
                   eta: float = 0.5, beta: float = 0.0) -> np.ndarray:
    """``dHs``: the filter normalization divided by the projection slope."""
    if x_tilde is None:
        return kernel.hs
    return kernel.hs / kernel.grid(project_derivative(x_tilde, eta, beta))


def backfilter(dfield: np.ndarray, kernel: FilterKernel, dhs: np.ndarray) -> np.ndarray:
    """Pull an element-wise sensitivity back through projection and filter.

    The padded cone correlation is a symmetric operator for both padding
    modes, so the adjoint is the same correlation applied to ``dfield / dHs``.
    """
    out = _correlate(kernel.grid(dfield) / dhs, kernel.h, kernel.bc)
    return np.ravel(out, order="F")
