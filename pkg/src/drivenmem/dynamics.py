"""Single-excitation dynamics of a cavity coupled to a spin ensemble.

In the low-excitation regime the cavity mode and the ensemble reduce to a
linear model whose generator is an arrowhead complex-symmetric matrix: the
cavity occupies the first row/column with complex frequency
``omega_c - i*kappa/2`` and couples to every spin with its real coupling,
while the spins (complex frequencies ``omega_k - i*gamma/2``) do not couple
among themselves.  The same constructor serves the bare and the driven
ensemble; the caller supplies dressed frequencies and halved couplings for
the latter.

Everything downstream is exact linear algebra: the cavity transmission is
the (0, 0) resolvent element times ``i*kappa/2``, and time evolution uses
the eigendecomposition of the arrowhead matrix (real-symmetric fast paths
when damping permits, dense complex otherwise).
"""

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.linalg

from .errors import DomainError, NumericalError, ValidationError
from .spectral import Ensemble

__all__ = [
    "CavitySpec",
    "SingleExcitationModel",
    "TransmissionSpectrum",
    "PeakDescriptor",
    "AmplitudeTrajectory",
    "build_model",
    "transmission",
    "transmission_spectrum",
    "evolve",
    "memory_kernel",
    "cavity_resolvent",
    "dominant_modes",
]

_CHUNK = 1 << 14


@dataclass(frozen=True)
class CavitySpec:
    """Cavity frequency and energy damping rate."""

    frequency: float
    damping: float

    def __post_init__(self):
        if not math.isfinite(self.frequency):
            raise ValidationError("cavity frequency must be finite")
        if not (math.isfinite(self.damping) and self.damping >= 0):
            raise ValidationError("cavity damping must be non-negative")


class _Eigensystem:
    """Eigendecomposition of the model matrix, with inverse application.

    For a complex-symmetric matrix the left eigenvectors are the transposes
    of the right ones, so ``V^{-1} = diag(1/(v_j^T v_j)) V^T`` whenever no
    eigenvalue is nearly defective; a dense solve is kept as fallback.
    """

    def __init__(self, values, vectors, orthogonal):
        self.values = values
        self.vectors = vectors
        self.orthogonal = orthogonal
        if orthogonal:
            self._normalizers = None
        else:
            self._normalizers = np.einsum("ij,ij->j", vectors, vectors)

    def project(self, vec):
        """Return expansion coefficients ``V^{-1} vec``."""
        if self.orthogonal:
            return self.vectors.T @ vec
        if np.min(np.abs(self._normalizers)) > 1e-8:
            coeff = (self.vectors.T @ vec) / self._normalizers
            residual = np.max(np.abs(self.vectors @ coeff - vec))
            if residual < 1e-9 * max(1.0, np.max(np.abs(vec))):
                return coeff
        try:
            return scipy.linalg.solve(self.vectors, vec)
        except scipy.linalg.LinAlgError as exc:  # pragma: no cover - defensive
            cond = np.linalg.cond(self.vectors)
            raise NumericalError(
                f"eigenvector matrix is numerically singular (cond ~ {cond:.3e})"
            ) from exc


@dataclass(frozen=True)
class SingleExcitationModel:
    """Arrowhead single-excitation model of one cavity mode and N spins."""

    cavity: CavitySpec
    ensemble: Ensemble

    @property
    def size(self) -> int:
        return self.ensemble.size + 1

    @property
    def complex_cavity_frequency(self) -> complex:
        return self.cavity.frequency - 0.5j * self.cavity.damping

    @cached_property
    def complex_spin_frequencies(self) -> np.ndarray:
        return self.ensemble.frequencies - 0.5j * self.ensemble.gamma

    @property
    def is_lossless(self) -> bool:
        return self.cavity.damping == 0.0 and self.ensemble.gamma == 0.0

    def dense_matrix(self) -> np.ndarray:
        n = self.size
        if self.is_lossless:
            matrix = np.zeros((n, n), dtype=float)
            matrix[0, 0] = self.cavity.frequency
            matrix[np.arange(1, n), np.arange(1, n)] = self.ensemble.frequencies
        else:
            matrix = np.zeros((n, n), dtype=complex)
            matrix[0, 0] = self.complex_cavity_frequency
            matrix[np.arange(1, n), np.arange(1, n)] = self.complex_spin_frequencies
        matrix[0, 1:] = self.ensemble.couplings
        matrix[1:, 0] = self.ensemble.couplings
        return matrix

    def apply(self, vec: np.ndarray) -> np.ndarray:
        """Matrix-vector product in O(N), using the arrowhead structure."""
        out = np.empty(self.size, dtype=complex)
        g = self.ensemble.couplings
        out[0] = self.complex_cavity_frequency * vec[0] + g @ vec[1:]
        out[1:] = g * vec[0] + self.complex_spin_frequencies * vec[1:]
        return out

    @cached_property
    def _eigensystem(self) -> _Eigensystem:
        kappa = self.cavity.damping
        gamma = self.ensemble.gamma
        try:
            if kappa == gamma:
                # Uniform damping is a global decay factor on a real
                # symmetric problem; eigh is exact and fast.
                real_matrix = np.real(self.dense_matrix()) if kappa else self.dense_matrix()
                values, vectors = scipy.linalg.eigh(real_matrix)
                values = values.astype(complex)
                if kappa:
                    values -= 0.5j * kappa
                return _Eigensystem(values, vectors, orthogonal=True)
            values, vectors = scipy.linalg.eig(self.dense_matrix())
            return _Eigensystem(values, vectors, orthogonal=False)
        except scipy.linalg.LinAlgError as exc:
            norm = np.linalg.norm(self.dense_matrix())
            raise NumericalError(
                f"eigendecomposition failed for model of size {self.size} "
                f"(matrix norm {norm:.3e})"
            ) from exc

    @property
    def eigenvalues(self) -> np.ndarray:
        return self._eigensystem.values


def build_model(cavity: CavitySpec, ensemble: Ensemble) -> SingleExcitationModel:
    """Assemble the single-excitation model for the given cavity and ensemble."""
    return SingleExcitationModel(cavity=cavity, ensemble=ensemble)


def memory_kernel(model: SingleExcitationModel, s):
    """Ensemble self-energy ``sum_k g_k^2 / (s + i*omega_tilde_k)``.

    ``s`` may be scalar or an array; evaluation is O(N) per point and chunked
    over the point grid.  Hitting a pole ``s == -i*omega_tilde_k`` of a
    coupled spin raises :class:`NumericalError`.
    """
    s_arr = np.atleast_1d(np.asarray(s, dtype=complex))
    scalar = np.ndim(s) == 0
    coupled = model.ensemble.couplings > 0
    g2 = model.ensemble.couplings[coupled] ** 2
    i_spins = 1j * model.complex_spin_frequencies[coupled]
    out = np.zeros(s_arr.shape, dtype=complex)
    for start in range(0, s_arr.size, _CHUNK):
        block = s_arr[start:start + _CHUNK, None] + i_spins[None, :]
        if (block == 0).any():
            k = int(np.argwhere(block == 0)[0, 1])
            freq = model.ensemble.frequencies[coupled][k]
            raise NumericalError(f"memory kernel pole hit at spin frequency {freq!r}")
        out[start:start + _CHUNK] = (g2[None, :] / block).sum(axis=1)
    return complex(out[0]) if scalar else out


def cavity_resolvent(model: SingleExcitationModel, s):
    """Cavity propagator ``T(s) = 1 / (s + i*omega_tilde_c + M(s))``."""
    m = memory_kernel(model, s)
    denom = np.asarray(s, dtype=complex) + 1j * model.complex_cavity_frequency + m
    if np.any(denom == 0):
        raise NumericalError("cavity resolvent pole hit")
    return 1.0 / denom


def transmission(model: SingleExcitationModel, omega, resolution: float = 0.0):
    """Complex transmission amplitude of the probed cavity at frequency ``omega``.

    ``t(omega) = (i*kappa/2) / [(omega_c - i*kappa/2 - omega)
    - sum_k g_k^2 / (omega_k - i*gamma/2 - omega)]``, evaluated by direct
    summation.  With zero spin damping an exactly resonant probe on a coupled
    spin is a real-axis pole and raises :class:`NumericalError`.

    ``resolution`` is the probe linewidth: the response is evaluated at
    ``omega + i*resolution``, i.e. averaged over an observation time
    ``1/resolution``.  A resolution at least comparable to the discrete level
    spacing near the resonances recovers the continuum envelope that a finite
    ensemble otherwise fragments into a comb of discretization teeth.
    """
    if resolution < 0:
        raise ValidationError("probe resolution must be non-negative")
    omega_arr = np.atleast_1d(np.asarray(omega, dtype=float))
    scalar = np.ndim(omega) == 0
    coupled = model.ensemble.couplings > 0
    g2 = model.ensemble.couplings[coupled] ** 2
    spins = model.complex_spin_frequencies[coupled]
    kappa = model.cavity.damping
    out = np.empty(omega_arr.shape, dtype=complex)
    for start in range(0, omega_arr.size, _CHUNK):
        probe = omega_arr[start:start + _CHUNK, None] + 1j * resolution
        block = spins[None, :] - probe
        if (block == 0).any():
            k = int(np.argwhere(block == 0)[0, 1])
            freq = model.ensemble.frequencies[coupled][k]
            raise NumericalError(
                f"transmission pole: probe exactly resonant with undamped spin at {freq!r}"
            )
        sigma = (g2[None, :] / block).sum(axis=1)
        denom = (model.complex_cavity_frequency - probe[:, 0]) - sigma
        out[start:start + _CHUNK] = (0.5j * kappa) / denom
    return complex(out[0]) if scalar else out


@dataclass(frozen=True)
class PeakDescriptor:
    """Location, height and full width at half maximum of one |t|^2 peak."""

    position: float
    height: float
    fwhm: float


@dataclass(frozen=True)
class TransmissionSpectrum:
    frequencies: np.ndarray
    amplitudes: np.ndarray
    power: np.ndarray = field(repr=False)
    peaks: tuple = ()

    @property
    def peak_positions(self):
        return np.array([p.position for p in self.peaks])


def _refine_peak(omega, power, idx):
    """Quadratic refinement of a local maximum through three grid points."""
    if idx == 0 or idx == len(omega) - 1:
        return omega[idx], power[idx]
    x0, x1, x2 = omega[idx - 1:idx + 2]
    y0, y1, y2 = power[idx - 1:idx + 2]
    denom = (y0 - 2.0 * y1 + y2)
    if denom >= 0:
        return omega[idx], power[idx]
    shift = 0.5 * (y0 - y2) / denom
    shift = float(np.clip(shift, -1.0, 1.0))
    pos = x1 + shift * 0.5 * (x2 - x0)
    height = y1 - 0.25 * (y0 - y2) * shift
    return pos, height


def _half_crossing(omega, power, idx, half, direction):
    """Linear interpolation of the half-height crossing on one side of a peak."""
    j = idx
    while 0 <= j + direction < len(power):
        j += direction
        if power[j] <= half:
            w0, w1 = omega[j - direction], omega[j]
            p0, p1 = power[j - direction], power[j]
            if p1 == p0:
                return w1
            frac = (p0 - half) / (p0 - p1)
            return w0 + frac * (w1 - w0)
    return math.nan


def transmission_spectrum(model: SingleExcitationModel, omega_grid,
                          resolution: float = 0.0) -> TransmissionSpectrum:
    """Evaluate |t|^2 over a frequency grid and describe up to two peaks.

    Peaks are local maxima refined by a three-point parabola; widths are full
    widths at half maximum of |t|^2 obtained by linear interpolation of the
    half-height crossings (NaN when a crossing falls outside the grid).
    ``resolution`` is forwarded to :func:`transmission`.
    """
    omega_grid = np.asarray(omega_grid, dtype=float)
    if omega_grid.ndim != 1 or omega_grid.size < 3:
        raise ValidationError("frequency grid must be 1-d with at least 3 points")
    if (np.diff(omega_grid) <= 0).any():
        raise ValidationError("frequency grid must be strictly increasing")
    amps = transmission(model, omega_grid, resolution=resolution)
    power = np.abs(amps) ** 2

    interior = np.arange(1, omega_grid.size - 1)
    is_max = (power[interior] > power[interior - 1]) & (power[interior] >= power[interior + 1])
    candidates = interior[is_max]
    # Rank by height, keep at most two, report in frequency order.
    candidates = sorted(candidates, key=lambda i: -power[i])[:2]
    peaks = []
    for idx in sorted(candidates):
        pos, height = _refine_peak(omega_grid, power, idx)
        half = 0.5 * height
        left = _half_crossing(omega_grid, power, idx, half, -1)
        right = _half_crossing(omega_grid, power, idx, half, +1)
        fwhm = right - left if math.isfinite(left) and math.isfinite(right) else math.nan
        peaks.append(PeakDescriptor(position=pos, height=height, fwhm=fwhm))
    return TransmissionSpectrum(
        frequencies=omega_grid, amplitudes=amps, power=power, peaks=tuple(peaks)
    )


@dataclass(frozen=True)
class AmplitudeTrajectory:
    """Time evolution of the cavity amplitude and the initial-state overlap."""

    times: np.ndarray
    cavity_amplitude: np.ndarray
    overlap: np.ndarray
    fidelity: np.ndarray
    norm_times: np.ndarray | None = None
    norms: np.ndarray | None = None


def _as_state(model, initial):
    if isinstance(initial, tuple):
        alpha0, alphas = initial
        state = np.concatenate(([complex(alpha0)], np.asarray(alphas, dtype=complex)))
    else:
        state = np.asarray(initial, dtype=complex)
    if state.shape != (model.size,):
        raise ValidationError(
            f"initial state must have {model.size} amplitudes, got {state.shape}"
        )
    norm = float(np.linalg.norm(state))
    if norm > 1.0 + 1e-12:
        raise ValidationError(f"initial norm {norm!r} exceeds 1")
    return state


def evolve(model: SingleExcitationModel, initial, times, norm_times=None) -> AmplitudeTrajectory:
    """Propagate an initial amplitude vector through the exact eigendecomposition.

    ``initial`` is either a full (N+1)-vector or a ``(alpha0, alphas)`` pair.
    The returned overlap is ``<psi(0)|psi(t)>`` against the undecayed initial
    vector, and the fidelity its squared magnitude.  ``norm_times`` requests
    total-excitation norms at selected times (full state reconstruction, so
    keep that list short for large ensembles).
    """
    times = np.asarray(times, dtype=float)
    state0 = _as_state(model, initial)
    eig = model._eigensystem
    coeff = eig.project(state0)
    phases = np.exp(-1j * np.outer(eig.values, times))
    weighted = coeff[:, None] * phases
    cavity_amp = eig.vectors[0, :] @ weighted
    overlap = (state0.conj() @ eig.vectors) @ weighted
    fidelity = np.abs(overlap) ** 2

    norms = None
    nt = None
    if norm_times is not None:
        nt = np.asarray(norm_times, dtype=float)
        phase_n = np.exp(-1j * np.outer(eig.values, nt))
        states = eig.vectors @ (coeff[:, None] * phase_n)
        norms = np.linalg.norm(states, axis=0) ** 2
    return AmplitudeTrajectory(
        times=times,
        cavity_amplitude=cavity_amp,
        overlap=overlap,
        fidelity=fidelity,
        norm_times=nt,
        norms=norms,
    )


def dominant_modes(model: SingleExcitationModel, count: int = 2):
    """Eigenvalues ranked by their prominence in the cavity transmission.

    The transmission is ``(i*kappa/2)`` times the (0,0) resolvent element,
    whose pole at eigenvalue ``lambda_j`` carries residue ``V_0j^2 / (v_j^T v_j)``;
    the peak-height proxy is |residue| / |Im lambda_j|.
    """
    eig = model._eigensystem
    if eig.orthogonal:
        residues = eig.vectors[0, :] ** 2
    else:
        residues = eig.vectors[0, :] ** 2 / eig._normalizers
    damping = np.maximum(np.abs(eig.values.imag), 1e-300)
    prominence = np.abs(residues) / damping
    order = np.argsort(prominence)[::-1][:count]
    return eig.values[order]
