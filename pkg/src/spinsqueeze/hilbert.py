"""Composite Hilbert space for a collective spin coupled to a truncated boson mode.

Conventions, fixed globally:
  * Dicke basis |J, m> with m ordered J, J-1, ..., -J (descending).
  * Fock basis |0>, ..., |n_max> (ascending).
  * Composite ordering is spin (x) boson, i.e. index = i_spin * (n_max+1) + n.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import comb

import numpy as np

__all__ = [
    "SpaceDescriptor",
    "Operator",
    "SpinOps",
    "BosonOps",
    "DensityMatrix",
    "build_spin_ops",
    "build_boson_ops",
    "embed",
    "coherent_spin_state",
    "initial_state",
    "initial_state_vector",
]

# DensityMatrix construction tolerances
TRACE_TOL = 1e-9
HERMITICITY_TOL = 1e-10
POSITIVITY_TOL = 1e-8


@dataclass(frozen=True)
class SpaceDescriptor:
    """Dimensions of the composite spin (x) boson space for N spins and Fock cutoff n_max."""

    n_spins: int
    fock_cutoff: int

    def __post_init__(self):
        if self.n_spins < 1:
            raise ValueError(f"n_spins must be >= 1, got {self.n_spins}")
        if self.fock_cutoff < 1:
            raise ValueError(f"fock_cutoff must be >= 1, got {self.fock_cutoff}")

    @property
    def j(self) -> float:
        return self.n_spins / 2.0

    @property
    def spin_dim(self) -> int:
        return self.n_spins + 1

    @property
    def fock_dim(self) -> int:
        return self.fock_cutoff + 1

    @property
    def total_dim(self) -> int:
        return self.spin_dim * self.fock_dim


@dataclass(frozen=True)
class Operator:
    """Dense operator tagged with the subsystem it acts on.

    subsystem is one of 'spin', 'boson', 'full'.  'spin'/'boson' operators may
    exist without a composite space attached (space=None) until embedded.
    """

    matrix: np.ndarray
    subsystem: str
    space: SpaceDescriptor | None = None

    def __post_init__(self):
        m = self.matrix
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValueError(f"operator matrix must be square, got shape {m.shape}")
        if self.subsystem not in ("spin", "boson", "full"):
            raise ValueError(f"unknown subsystem {self.subsystem!r}")
        if self.space is not None:
            expected = {
                "spin": self.space.spin_dim,
                "boson": self.space.fock_dim,
                "full": self.space.total_dim,
            }[self.subsystem]
            if m.shape[0] != expected:
                raise ValueError(
                    f"{self.subsystem} operator has dim {m.shape[0]}, "
                    f"space expects {expected}"
                )

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]


@dataclass(frozen=True)
class SpinOps:
    """Collective angular momentum operators in the Dicke basis (spin subsystem)."""

    jx: Operator
    jy: Operator
    jz: Operator
    jplus: Operator
    jminus: Operator
    n_spins: int


@dataclass(frozen=True)
class BosonOps:
    """Truncated annihilation/creation/number operators in the Fock basis."""

    a: Operator
    a_dag: Operator
    number: Operator
    fock_cutoff: int


@dataclass(frozen=True)
class DensityMatrix:
    """Validated density matrix on the composite space."""

    space: SpaceDescriptor
    matrix: np.ndarray
    validate: bool = field(default=True, repr=False, compare=False)

    def __post_init__(self):
        m = self.matrix
        if m.shape != (self.space.total_dim, self.space.total_dim):
            raise ValueError(
                f"density matrix shape {m.shape} does not match "
                f"total_dim {self.space.total_dim}"
            )
        if self.validate:
            tr = np.trace(m).real
            if abs(tr - 1.0) > TRACE_TOL:
                raise ValueError(f"trace deviates from 1 by {abs(tr - 1.0):.3e}")
            herm = np.max(np.abs(m - m.conj().T))
            if herm > HERMITICITY_TOL:
                raise ValueError(f"Hermiticity violation {herm:.3e}")
            min_eig = np.linalg.eigvalsh(m)[0]
            if min_eig < -POSITIVITY_TOL:
                raise ValueError(f"negative eigenvalue {min_eig:.3e}")

    @property
    def purity(self) -> float:
        return float(np.trace(self.matrix @ self.matrix).real)


def build_spin_ops(n_spins: int) -> SpinOps:
    """Collective spin operators for N spins in the (2J+1)-dim Dicke basis, J = N/2.

    Matrix elements <J,m'|J_pm|J,m> = sqrt(J(J+1) - m(m +- 1)) delta_{m', m +- 1}.
    """
    if n_spins < 1:
        raise ValueError(f"n_spins must be >= 1, got {n_spins}")
    j = n_spins / 2.0
    dim = n_spins + 1
    m_vals = j - np.arange(dim)  # descending J..-J

    jp = np.zeros((dim, dim), dtype=complex)
    for i in range(1, dim):
        m = m_vals[i]
        jp[i - 1, i] = np.sqrt(j * (j + 1) - m * (m + 1))
    jm = jp.conj().T
    jx = 0.5 * (jp + jm)
    jy = -0.5j * (jp - jm)
    jz = np.diag(m_vals).astype(complex)

    mk = lambda m: Operator(m, "spin")
    return SpinOps(jx=mk(jx), jy=mk(jy), jz=mk(jz), jplus=mk(jp), jminus=mk(jm),
                   n_spins=n_spins)


def build_boson_ops(fock_cutoff: int) -> BosonOps:
    """Boson operators truncated at Fock level n_max: <n-1|a|n> = sqrt(n)."""
    if fock_cutoff < 1:
        raise ValueError(f"fock_cutoff must be >= 1, got {fock_cutoff}")
    dim = fock_cutoff + 1
    a = np.zeros((dim, dim), dtype=complex)
    for n in range(1, dim):
        a[n - 1, n] = np.sqrt(n)
    a_dag = a.conj().T
    number = a_dag @ a

    mk = lambda m: Operator(m, "boson")
    return BosonOps(a=mk(a), a_dag=mk(a_dag), number=mk(number),
                    fock_cutoff=fock_cutoff)


def embed(op: Operator, space: SpaceDescriptor, subsystem: str | None = None) -> Operator:
    """Lift a subsystem operator to the composite space (spin (x) boson ordering)."""
    sub = subsystem or op.subsystem
    if sub == "spin":
        if op.dim != space.spin_dim:
            raise ValueError(f"spin operator dim {op.dim} != spin_dim {space.spin_dim}")
        full = np.kron(op.matrix, np.eye(space.fock_dim))
    elif sub == "boson":
        if op.dim != space.fock_dim:
            raise ValueError(f"boson operator dim {op.dim} != fock_dim {space.fock_dim}")
        full = np.kron(np.eye(space.spin_dim), op.matrix)
    else:
        raise ValueError(f"cannot embed subsystem {sub!r}")
    return Operator(full, "full", space)


def coherent_spin_state(theta: float, phi: float, n_spins: int) -> np.ndarray:
    """Coherent spin state |theta, phi> as amplitudes over Dicke states m = J..-J.

    Amplitudes follow (1+|eta|^2)^(-J) sqrt(C(2J, J+m)) eta^(J+m) with
    eta = -tan(theta/2) exp(-i phi), evaluated in the numerically stable
    sin/cos form.  At the theta = pi pole the analytic limit along fixed phi
    is used, which leaves the single Dicke component |J, J> with phase
    (-1)^N exp(-i N phi).
    """
    if n_spins < 1:
        raise ValueError(f"n_spins must be >= 1, got {n_spins}")
    dim = n_spins + 1
    half = 0.5 * theta
    c, s = np.cos(half), np.sin(half)
    # index i corresponds to m = J - i, so J + m = n_spins - i
    k = n_spins - np.arange(dim)          # power of eta
    amps = np.array([np.sqrt(comb(n_spins, int(kk))) for kk in k], dtype=complex)
    amps *= (-1.0) ** k * s ** k * c ** (n_spins - k)
    amps *= np.exp(-1j * phi * k)
    norm = np.linalg.norm(amps)
    return amps / norm


def initial_state_vector(space: SpaceDescriptor, theta: float = np.pi / 2,
                         phi: float = np.pi / 2) -> np.ndarray:
    """Pure |theta, phi> (x) |vacuum> state vector on the composite space."""
    css = coherent_spin_state(theta, phi, space.n_spins)
    vac = np.zeros(space.fock_dim, dtype=complex)
    vac[0] = 1.0
    return np.kron(css, vac)


def initial_state(params, theta: float = np.pi / 2, phi: float = np.pi / 2) -> DensityMatrix:
    """Default initial density matrix |theta,phi><theta,phi| (x) |0><0|.

    `params` is anything exposing n_spins and fock_cutoff (e.g. ModelParams).
    """
    space = SpaceDescriptor(params.n_spins, params.fock_cutoff)
    psi = initial_state_vector(space, theta, phi)
    rho = np.outer(psi, psi.conj())
    return DensityMatrix(space, rho)
