"""Dispersive effective models reachable with constant drive amplitudes.

For a constant control amplitude the drive dresses the spin-boson coupling
with Bessel-function weights; near the sideband resonance m0 (the integer
minimizing |m nu + omega_c + omega_z|) the model reduces, at second order in
g/Delta, to

    H_eff = Delta a^dag a - ((g0^2 - gm0^2)/Delta) (1 + 2 a^dag a) Jz
            + ((g0 - gm0)^2/Delta) Jz^2 - (4 g0 gm0/Delta) Jx^2,

with g0 = g J_0(zeta)/2 and gm0 = g J_m0(zeta)/2.  Choosing zeta so that
J_0 = J_m0 yields a pure one-axis-twisting term chi Jx^2; choosing
(g0-gm0)^2 = 4 g0 gm0 yields the two-axis-twisting-type combination
-lambda (Jx^2 - Jz^2) with a residual linear term.  validate_effective
checks the reduction against the full driven model via state fidelity.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm
from scipy.optimize import bisect
from scipy.special import jv

from . import hilbert
from .dynamics import ControlSignal, ModelParams, evolve_unitary
from .hilbert import Operator, embed

__all__ = [
    "EffectiveParams",
    "bessel_j",
    "find_m0",
    "oat_condition_roots",
    "tat_condition_roots",
    "effective_params",
    "effective_hamiltonian",
    "validate_effective",
]

BESSEL_MAX_ORDER = 20
BESSEL_MAX_ARG = 30.0
ROOT_GRID_STEP = 1e-3
ROOT_XTOL = 1e-12  # finer than the contractual 1e-8 so derived couplings agree to 1e-10


@dataclass(frozen=True)
class EffectiveParams:
    """Derived couplings of the second-order effective model at one (zeta, m0)."""

    m0: int
    delta: float            # omega_c - omega_z
    Delta: float            # m0 nu + omega_c + omega_z (resonant detuning)
    g0: float
    gm0: float
    chi: float              # OAT rate -g^2 J_m0(zeta)^2 / Delta
    lam: float              # TAT-type rate 4 g0 gm0 / Delta
    lam_prime: float        # (g0^2 - gm0^2) / Delta


def bessel_j(order: int, x: float) -> float:
    """Bessel function of the first kind J_order(x) on the validated range."""
    if abs(order) > BESSEL_MAX_ORDER:
        raise ValueError(f"|order| > {BESSEL_MAX_ORDER} outside validated range")
    if abs(x) > BESSEL_MAX_ARG:
        raise ValueError(f"|x| > {BESSEL_MAX_ARG} outside validated range")
    return float(jv(order, x))


def find_m0(params: ModelParams, use_rounding_formula: bool = False) -> int:
    """Sideband index minimizing |m nu + omega_c + omega_z|; ties toward smaller |m|.

    use_rounding_formula selects the alternative -2*round(omega_z/nu)
    prescription, kept behind a flag because it disagrees with the argmin for
    the default working point; the argmin matches the published root values.
    """
    if use_rounding_formula:
        return -2 * int(np.floor(params.omega_z / params.nu + 0.5))
    s = params.omega_c + params.omega_z
    m_star = -s / params.nu
    candidates = sorted({math.floor(m_star), math.ceil(m_star)})
    best = min(candidates, key=lambda m: (abs(m * params.nu + s), abs(m)))
    return int(best)


def _bracketed_roots(f, lo: float, hi: float) -> list[float]:
    """All sign-change roots of f on [lo, hi] via a fine grid + bisection."""
    n = max(2, int(math.ceil((hi - lo) / ROOT_GRID_STEP)))
    xs = np.linspace(lo, hi, n + 1)
    vals = np.array([f(x) for x in xs])
    roots = []
    for i in range(n):
        a, b = xs[i], xs[i + 1]
        fa, fb = vals[i], vals[i + 1]
        if fa == 0.0:
            roots.append(float(a))
        elif fa * fb < 0.0:
            roots.append(float(bisect(f, a, b, xtol=ROOT_XTOL)))
    if vals[-1] == 0.0:
        roots.append(float(xs[-1]))
    return roots


def oat_condition_roots(m0: int, zeta_range: tuple[float, float]) -> list[float]:
    """Amplitudes where J_0(zeta) = J_m0(zeta), i.e. g0 = gm0 (pure Jx^2 model)."""
    f = lambda z: bessel_j(0, z) - bessel_j(m0, z)
    return _bracketed_roots(f, *zeta_range)


def tat_condition_roots(m0: int, zeta_range: tuple[float, float]) -> list[float]:
    """Amplitudes where (g0-gm0)^2 = 4 g0 gm0, i.e. J_0 = (3 +- 2 sqrt(2)) J_m0.

    Both sign branches are searched; the union is returned sorted.
    """
    roots = []
    for c in (3.0 + 2.0 * math.sqrt(2.0), 3.0 - 2.0 * math.sqrt(2.0)):
        f = lambda z: bessel_j(0, z) - c * bessel_j(m0, z)
        roots.extend(_bracketed_roots(f, *zeta_range))
    return sorted(roots)


def effective_params(zeta: float, params: ModelParams, m0: int | None = None) -> EffectiveParams:
    m0 = find_m0(params) if m0 is None else m0
    Delta = m0 * params.nu + params.omega_c + params.omega_z
    if Delta == 0.0:
        raise ValueError("Delta = 0: no dispersive expansion")
    g0 = params.g * bessel_j(0, zeta) / 2.0
    gm0 = params.g * bessel_j(m0, zeta) / 2.0
    return EffectiveParams(
        m0=m0, delta=params.omega_c - params.omega_z, Delta=Delta, g0=g0, gm0=gm0,
        chi=-params.g ** 2 * bessel_j(m0, zeta) ** 2 / Delta,
        lam=4.0 * g0 * gm0 / Delta,
        lam_prime=(g0 ** 2 - gm0 ** 2) / Delta)


def effective_hamiltonian(zeta: float, params: ModelParams,
                          m0: int | None = None) -> Operator:
    """Second-order effective Hamiltonian on the composite space (dispersive regime)."""
    ep = effective_params(zeta, params, m0)
    if abs(ep.Delta) <= 5.0 * params.g:
        import warnings
        warnings.warn(f"Delta = {ep.Delta} is within 5g; dispersive expansion marginal")
    space = params.space
    spin = hilbert.build_spin_ops(params.n_spins)
    boson = hilbert.build_boson_ops(params.fock_cutoff)
    jz = embed(spin.jz, space).matrix
    jx = embed(spin.jx, space).matrix
    n = embed(boson.number, space).matrix
    eye = np.eye(space.total_dim)
    h = (ep.Delta * n
         - ep.lam_prime * (eye + 2.0 * n) @ jz
         + ((ep.g0 - ep.gm0) ** 2 / ep.Delta) * (jz @ jz)
         - ep.lam * (jx @ jx))
    return Operator(h, "full", space)


def _sw_generator(zeta: float, params: ModelParams, ep: EffectiveParams) -> np.ndarray:
    space = params.space
    spin = hilbert.build_spin_ops(params.n_spins)
    boson = hilbert.build_boson_ops(params.fock_cutoff)
    jp = embed(spin.jplus, space).matrix
    jm = embed(spin.jminus, space).matrix
    a = embed(boson.a, space).matrix
    sigma = (bessel_j(0, zeta) * jm + bessel_j(ep.m0, zeta) * jp) / 2.0
    return (params.g / ep.Delta) * (sigma @ a.conj().T - sigma.conj().T @ a)


def validate_effective(zeta: float, params: ModelParams, t_final: float,
                       record_every: float = 0.1, dressed: bool = True,
                       convention: str = "amplitude",
                       y_target: float | None = None):
    """Fidelity F(t) between full driven evolution and the effective model.

    The full state is mapped into the effective frame with the analytic
    rotating-frame phases (V then V1); when dressed=True the comparison chain
    also includes the second-order diagonalizing transformation e^{+-R}, which
    is part of frame consistency (without it the overlap loses ~1.5e-3 by
    gt=50).  convention='amplitude' returns |<psi|phi>| (Uhlmann fidelity of
    pure states); 'squared' returns the overlap probability.

    Returns (times, F) arrays.
    """
    if params.kappa != 0.0 or params.gamma != 0.0:
        raise ValueError("validation is defined for the unitary setting (kappa=gamma=0)")
    if convention not in ("amplitude", "squared"):
        raise ValueError(f"unknown convention {convention!r}")
    ep = effective_params(zeta, params)
    h_eff = effective_hamiltonian(zeta, params).matrix

    space = params.space
    psi0 = hilbert.initial_state_vector(space)
    ctrl = ControlSignal.constant(zeta, t_final=t_final, dt_ctrl=0.5)
    kwargs = {} if y_target is None else {"y_target": y_target}
    traj = evolve_unitary(psi0, ctrl, params, t_final=t_final,
                          record_every=record_every, store_states=True, **kwargs)

    w, v = np.linalg.eigh(h_eff)
    if dressed:
        e_r = expm(_sw_generator(zeta, params, ep))
        c0 = v.conj().T @ (e_r @ psi0)
        undress = e_r.conj().T
    else:
        c0 = v.conj().T @ psi0
        undress = None

    S, F = space.spin_dim, space.fock_dim
    mv = np.repeat(space.j - np.arange(S), F)
    fv = np.tile(np.arange(F), S)
    fids = np.empty(len(traj.times))
    for i, (t, psi_lab) in enumerate(zip(traj.times, traj.states)):
        psi_eff = v @ (np.exp(-1j * w * t) * c0)
        if undress is not None:
            psi_eff = undress @ psi_eff
        phases = (params.omega_c * t * fv
                  + (params.omega_z * t + zeta * np.sin(params.nu * t)) * mv
                  - ep.Delta * t * fv)
        overlap = abs(np.vdot(psi_eff, np.exp(1j * phases) * psi_lab))
        fids[i] = overlap if convention == "amplitude" else overlap ** 2
    return np.asarray(traj.times), fids
