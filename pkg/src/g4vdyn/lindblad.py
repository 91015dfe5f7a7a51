"""
Three-level Lambda-system master equation.

Basis ordering is ``(g1, g2, e)`` = ``(|1 down>, |2 up>, |A down>)``.  The
carrier ``omega1`` drives the spin-flipping transition g2 <-> e, the sideband
``omega2`` the spin-conserving transition g1 <-> e.

Density matrices are vectorised row-major (``rho.ravel()``), so that
``vec(A @ rho @ B) = kron(A, B.T) @ vec(rho)``.

Rate conventions (inputs are ordinary frequencies in Hz):

* total excited-state decay ``2*pi*gamma`` (``gamma`` is the FWHM of the
  radiatively limited line), split ``eta : 1`` into g1 and g2;
* ground-state coherence decays at ``coherence_factor * gamma_s`` with
  ``coherence_factor = 2*pi`` by default, so the weak-drive dip FWHM in the
  two-photon detuning approaches ``2 * gamma_s``;
* ``gamma_flip`` is a population rate in 1/s applied in each direction,
  ``1 / (2 T1)``;
* dephasing time reported as ``T2* = 1 / (t2star_factor * gamma_s)`` with
  ``t2star_factor = pi`` by default (64 kHz <-> 5.0 us).
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields

import numpy as np
import scipy.linalg
from scipy.integrate import solve_ivp
from scipy.optimize import brentq

from .errors import DegeneracyError, StiffnessError, ValidationError

__all__ = [
    "LambdaSystem", "DensityMatrix", "Liouvillian", "CPTSpectrum",
    "build_hamiltonian", "build_liouvillian", "collapse_operators",
    "steady_state", "time_evolve", "slowest_rate",
    "cpt_spectrum", "excited_population", "cpt_dip_fwhm", "t2_star", "sample_cpt_spectrum",
    "G1", "G2", "E",
]

TWO_PI = 2.0 * math.pi
G1, G2, E = 0, 1, 2
DIM = 3


def _ket_bra(i, j):
    m = np.zeros((DIM, DIM), dtype=complex)
    m[i, j] = 1.0
    return m


@dataclass(frozen=True)
class LambdaSystem:
    """Parameters of the driven Lambda system (all in Hz except ``gamma_flip``)."""

    gamma: float = 25e6
    eta_branch: float = 650.0
    gamma_s: float = 64e3
    gamma_flip: float = 1.0 / (2 * 22e-3)
    omega1: float = 0.0
    omega2: float = 0.0
    delta1: float = 0.0
    delta2: float = 0.0
    coherence_factor: float = TWO_PI
    t2star_factor: float = math.pi

    def __post_init__(self):
        for name in ("gamma", "omega1", "omega2", "gamma_s", "gamma_flip"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value >= 0):
                raise ValidationError(name, f"must be non-negative, got {value!r}")
        if not self.eta_branch >= 1:
            raise ValidationError("eta_branch", f"must be >= 1, got {self.eta_branch!r}")
        if not self.coherence_factor > 0 or not self.t2star_factor > 0:
            raise ValidationError("coherence_factor", "convention factors must be positive")

    @classmethod
    def from_emitter(cls, emitter, omega1=0.0, omega2=0.0, delta1=0.0, delta2=0.0, **kw):
        kw.setdefault("gamma_s", emitter.gamma_s)
        return cls(gamma=emitter.gamma0, eta_branch=emitter.eta_branch,
                   gamma_flip=1.0 / (2.0 * emitter.t1_spin),
                   omega1=omega1, omega2=omega2, delta1=delta1, delta2=delta2, **kw)

    @classmethod
    def numeric_fields(cls):
        return ("gamma", "eta_branch", "gamma_s", "gamma_flip",
                "omega1", "omega2", "delta1", "delta2")

    @property
    def two_photon_detuning(self):
        return self.delta2 - self.delta1

    @property
    def t2_star(self):
        return t2_star(self.gamma_s, self.t2star_factor)

    def snapshot(self):
        """Plain dict of every field, including the convention factors."""
        return asdict(self)


def t2_star(gamma_s, factor=math.pi):
    """Spin dephasing time ``1 / (factor * gamma_s)`` under the documented convention."""
    return 1.0 / (factor * gamma_s)


class DensityMatrix:
    """A validated 3x3 density matrix.

    Construction checks Hermiticity (1e-12 relative), unit trace (1e-10)
    and eigenvalues >= -1e-10.
    """

    __slots__ = ("rho",)

    def __init__(self, rho, check=True):
        rho = np.array(rho, dtype=complex).reshape(DIM, DIM)
        if check:
            herm = np.max(np.abs(rho - rho.conj().T))
            if herm > 1e-12:
                raise ValidationError("rho", f"not Hermitian (deviation {herm:.2e})")
            tr = np.trace(rho)
            if abs(tr - 1.0) > 1e-10:
                raise ValidationError("rho", f"trace is {tr.real:.12g}, not 1")
            lam = np.linalg.eigvalsh(0.5 * (rho + rho.conj().T))
            if lam[0] < -1e-10:
                raise ValidationError("rho", f"negative eigenvalue {lam[0]:.3e}")
        self.rho = rho

    @classmethod
    def pure(cls, level):
        rho = np.zeros((DIM, DIM), dtype=complex)
        rho[level, level] = 1.0
        return cls(rho)

    @classmethod
    def from_vector(cls, vec, check=True):
        """Hermitise and renormalise a vectorised state before validation."""
        rho = np.asarray(vec, dtype=complex).reshape(DIM, DIM)
        rho = 0.5 * (rho + rho.conj().T)
        rho = rho / np.trace(rho).real
        return cls(rho, check=check)

    @property
    def populations(self):
        return np.real(np.diag(self.rho)).copy()

    @property
    def excited_population(self):
        return float(self.rho[E, E].real)

    def vec(self):
        return self.rho.ravel().copy()

    def __repr__(self):
        p = self.populations
        return f"DensityMatrix(populations=[{p[0]:.4g}, {p[1]:.4g}, {p[2]:.4g}])"


@dataclass(frozen=True, eq=False)
class Liouvillian:
    """Generator ``d vec(rho)/dt = matrix @ vec(rho)`` in angular units (1/s)."""

    matrix: np.ndarray
    system: LambdaSystem | None = None

    @property
    def trace_row(self):
        """``d tr(rho) / dt`` as a row vector; identically zero when trace preserving."""
        return np.eye(DIM).ravel() @ self.matrix

    def apply(self, rho):
        rho = rho.rho if isinstance(rho, DensityMatrix) else np.asarray(rho)
        return (self.matrix @ rho.ravel()).reshape(DIM, DIM)


def build_hamiltonian(sys: LambdaSystem):
    """Rotating-frame Hamiltonian in rad/s.

    ``H = 2 pi [-delta1 |g2><g2| - delta2 |g1><g1|
    + omega1/2 (|e><g2| + h.c.) + omega2/2 (|e><g1| + h.c.)]``
    """
    h = np.zeros((DIM, DIM), dtype=complex)
    h[G2, G2] = -sys.delta1
    h[G1, G1] = -sys.delta2
    h[E, G2] = h[G2, E] = 0.5 * sys.omega1
    h[E, G1] = h[G1, E] = 0.5 * sys.omega2
    return TWO_PI * h


def collapse_operators(sys: LambdaSystem):
    """Collapse operators ``{name: c}`` with rates in 1/s."""
    gamma = TWO_PI * sys.gamma
    eta = sys.eta_branch
    sz = _ket_bra(G1, G1) - _ket_bra(G2, G2)
    return {
        "decay_sc": math.sqrt(gamma * eta / (1.0 + eta)) * _ket_bra(G1, E),
        "decay_sf": math.sqrt(gamma / (1.0 + eta)) * _ket_bra(G2, E),
        # sqrt(k) * sz damps the g1/g2 coherence at 2k
        "dephasing": math.sqrt(0.5 * sys.coherence_factor * sys.gamma_s) * sz,
        "flip_up": math.sqrt(sys.gamma_flip) * _ket_bra(G1, G2),
        "flip_down": math.sqrt(sys.gamma_flip) * _ket_bra(G2, G1),
    }


_I = np.eye(DIM)


def _commutator_super(h):
    return -1j * (np.kron(h, _I) - np.kron(_I, h.T))


def _dissipator_super(c):
    cdc = c.conj().T @ c
    return np.kron(c, c.conj()) - 0.5 * np.kron(cdc, _I) - 0.5 * np.kron(_I, cdc.T)


def _dissipative_part(sys):
    return sum(_dissipator_super(c) for c in collapse_operators(sys).values())


def build_liouvillian(sys: LambdaSystem) -> Liouvillian:
    """``L = -i[H, .] + sum_k D[c_k]`` as a 9x9 matrix."""
    return Liouvillian(_commutator_super(build_hamiltonian(sys)) + _dissipative_part(sys), sys)


def _bordered(lmat):
    a = np.array(lmat, dtype=complex, copy=True)
    a[..., 0, :] = np.eye(DIM).ravel()
    return a


def _null_dimension(lmat, tol=1e-12):
    sv = np.linalg.svd(lmat, compute_uv=False)
    return np.sum(sv <= tol * sv[..., :1], axis=-1)


def steady_state(L) -> DensityMatrix:
    """Unique stationary state of ``L``.

    Solved as a bordered linear system: the first row of ``L`` (a
    population row, linearly dependent on the others when ``L`` preserves
    trace) is replaced by the trace constraint.

    Raises
    ------
    DegeneracyError
        If the null space of ``L`` has dimension larger than one.
    """
    lmat = L.matrix if isinstance(L, Liouvillian) else np.asarray(L)
    dim = int(_null_dimension(lmat))
    if dim != 1:
        raise DegeneracyError(dim)
    rhs = np.zeros(DIM * DIM, dtype=complex)
    rhs[0] = 1.0
    vec = np.linalg.solve(_bordered(lmat), rhs)
    return DensityMatrix.from_vector(vec)


def slowest_rate(L):
    """Smallest non-zero relaxation rate ``-Re(lambda)`` of ``L``, 1/s."""
    lmat = L.matrix if isinstance(L, Liouvillian) else np.asarray(L)
    ev = np.linalg.eigvals(lmat)
    decay = np.sort(-ev.real)
    return float(decay[1])


def time_evolve(rho0, L, t, tol=1e-10, method="expm") -> DensityMatrix:
    """Propagate ``rho0`` for a time ``t`` (s).

    ``method="expm"`` uses the matrix exponential; ``method="ode"`` an
    implicit adaptive integrator with relative tolerance ``tol``.

    Raises
    ------
    StiffnessError
        If the adaptive integrator fails (step size underflow).
    """
    rho0 = rho0 if isinstance(rho0, DensityMatrix) else DensityMatrix(rho0)
    lmat = L.matrix if isinstance(L, Liouvillian) else np.asarray(L)
    if t == 0 or not np.any(lmat):
        return DensityMatrix(rho0.rho.copy())
    v0 = rho0.vec()
    if method == "expm":
        vec = scipy.linalg.expm(lmat * t) @ v0
    elif method == "ode":
        sol = solve_ivp(lambda _t, v: lmat @ v, (0.0, t), v0, method="BDF",
                        jac=lmat, rtol=tol, atol=tol * 1e-2)
        if sol.status != 0:
            raise StiffnessError(f"integration failed: {sol.message}")
        vec = sol.y[:, -1]
    else:
        raise ValueError(f"unknown method {method!r}")
    return DensityMatrix.from_vector(vec)


# ---------------------------------------------------------------------------
# Spectra

def _tapered_omega2(sys, delta, taper):
    return sys.omega2 * np.clip(1.0 + taper * delta, 0.0, None)


def excited_population(sys: LambdaSystem, delta, taper=0.0):
    """Steady-state ``rho_ee`` at two-photon detunings ``delta`` (Hz).

    For each point ``delta2 = delta1 + delta``.  With ``taper != 0`` the
    sideband Rabi frequency becomes ``omega2 * (1 + taper * delta)``.
    Evaluated as one batched bordered solve.
    """
    delta = np.atleast_1d(np.asarray(delta, dtype=float))
    dis = _dissipative_part(sys)
    n = delta.size
    h = np.zeros((n, DIM, DIM), dtype=complex)
    h[:, G2, G2] = -sys.delta1
    h[:, G1, G1] = -(sys.delta1 + delta)
    h[:, E, G2] = h[:, G2, E] = 0.5 * sys.omega1
    om2 = _tapered_omega2(sys, delta, taper) if taper else np.full(n, sys.omega2)
    h[:, E, G1] = h[:, G1, E] = 0.5 * om2
    h *= TWO_PI
    eye = np.broadcast_to(_I, h.shape)
    lmat = -1j * (np.einsum("nij,nkl->nikjl", h, eye).reshape(n, 9, 9)
                  - np.einsum("nij,nlk->nikjl", eye, h).reshape(n, 9, 9)) + dis
    dims = _null_dimension(lmat)
    if np.any(dims != 1):
        raise DegeneracyError(int(dims[dims != 1][0]))
    rhs = np.zeros((n, 9, 1), dtype=complex)
    rhs[:, 0, 0] = 1.0
    vec = np.linalg.solve(_bordered(lmat), rhs)[..., 0]
    return vec[:, E * DIM + E].real.copy()


@dataclass(frozen=True, eq=False)
class CPTSpectrum:
    delta: np.ndarray
    rho_ee: np.ndarray
    counts: np.ndarray
    params: dict

    @property
    def points(self):
        return list(zip(self.delta.tolist(), self.rho_ee.tolist(), self.counts.tolist()))


def cpt_spectrum(sys: LambdaSystem, delta_grid, emitter=None, background=0.0,
                 taper=0.0, count_scale=None) -> CPTSpectrum:
    """Steady-state CPT spectrum on a two-photon detuning grid.

    ``counts = 2 * c_max * rho_ee + background``; ``c_max`` comes from
    ``emitter`` unless ``count_scale`` is given.
    """
    delta = np.asarray(delta_grid, dtype=float)
    if delta.size == 0:
        raise ValidationError("delta_grid", "must not be empty")
    if count_scale is None:
        count_scale = emitter.c_max if emitter is not None else 45e3
    rho_ee = excited_population(sys, delta, taper=taper)
    counts = 2.0 * count_scale * rho_ee + background
    params = sys.snapshot()
    params.update(background=float(background), count_scale=float(count_scale),
                  taper=float(taper), t2_star=sys.t2_star if sys.gamma_s > 0 else None)
    return CPTSpectrum(delta, rho_ee, counts, params)


def cpt_dip_fwhm(sys: LambdaSystem, span=None):
    """Full width at half depth of the CPT dip centred at ``delta = 0``, Hz.

    The dip floor is ``rho_ee(0)``; the reference is the nearest shoulder
    maximum on the positive side.  Requires ``delta1 == 0`` (symmetric dip).
    """
    if sys.delta1 != 0:
        raise ValidationError("delta1", "dip width is defined for delta1 = 0")
    estimate = 2 * sys.gamma_s + (sys.omega1 ** 2 + sys.omega2 ** 2) / max(sys.gamma, 1.0) + 1.0
    if span is None:
        span = 30.0 * estimate
    grid = np.concatenate([[0.0], np.geomspace(estimate * 1e-3, span, 600)])
    rho = excited_population(sys, grid)
    i_peak = int(np.argmax(rho))
    floor, peak = rho[0], rho[i_peak]
    if i_peak == 0 or peak <= floor:
        raise ValidationError("omega", "no CPT dip found")
    half = 0.5 * (floor + peak)
    j = int(np.argmax(rho[: i_peak + 1] >= half))
    root = brentq(lambda d: excited_population(sys, [d])[0] - half, grid[j - 1], grid[j],
                  xtol=1e-9 * estimate, rtol=1e-12)
    return 2.0 * root


def sample_cpt_spectrum(sys: LambdaSystem, delta_grid, dwell, seed=0, *, emitter=None,
                        background=0.0, taper=0.0, count_scale=None):
    """Poisson-sampled CPT spectrum.

    Returns ``(spectrum, rate, sigma)`` where ``rate`` is the measured count
    rate (counts / dwell) and ``sigma = sqrt(max(counts, 1)) / dwell``.
    ``dwell = 0`` returns the noise-free rates with unit-count errors.
    """
    from ._util import rng_for

    spec = cpt_spectrum(sys, delta_grid, emitter, background, taper, count_scale)
    if dwell == 0:
        return spec, spec.counts.copy(), np.sqrt(np.maximum(spec.counts, 1.0))
    if not dwell > 0:
        raise ValidationError("dwell", "must be >= 0")
    n = rng_for(seed, "cpt_noise").poisson(spec.counts * dwell)
    return spec, n / dwell, np.sqrt(np.maximum(n, 1.0)) / dwell
