"""Truncated Fock-space and multi-atom Hilbert-space numerics.

The composite space is ordered (mode a, mode b, atom 1, ..., atom N) with
local dimensions (n_max_a + 1, n_max_b + 1, 3, ..., 3).  Mode b with
``n_max_b = 0`` is treated as absent (a dimension-1 placeholder factor), which
is how the degenerate single-mode configuration is represented.  All operators
are stored as sparse CSR matrices in canonical form, so identical inputs
always reproduce identical matrices.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import LayoutError

#: hard ceiling on the composite dimension unless a layout overrides it
DEFAULT_DIM_LIMIT = 2_000_000

_ATOM_DIM = 3


@dataclass(frozen=True)
class HilbertLayout:
    """Fixed subsystem ordering and truncation of the composite space.

    Parameters
    ----------
    n_max_a : int
        Photon-number cutoff of mode a (>= 1).
    n_max_b : int
        Cutoff of mode b; 0 means mode b is absent (degenerate configuration).
    n_atoms : int
        Number of three-level atoms.
    dim_limit : int
        Upper bound on the composite dimension, checked at construction.
    """

    n_max_a: int
    n_max_b: int = 0
    n_atoms: int = 0
    dim_limit: int = DEFAULT_DIM_LIMIT

    def __post_init__(self):
        if self.n_max_a < 1:
            raise LayoutError(f"n_max_a must be >= 1, got {self.n_max_a}")
        if self.n_max_b < 0:
            raise LayoutError(f"n_max_b must be >= 0, got {self.n_max_b}")
        if self.n_atoms < 0:
            raise LayoutError(f"n_atoms must be >= 0, got {self.n_atoms}")
        # Python ints do not overflow; only the limit matters.
        if self.dim > self.dim_limit:
            raise LayoutError(
                f"composite dimension {self.dim} exceeds limit {self.dim_limit}"
            )

    @property
    def dim_a(self) -> int:
        return self.n_max_a + 1

    @property
    def dim_b(self) -> int:
        return self.n_max_b + 1

    @property
    def has_mode_b(self) -> bool:
        return self.n_max_b > 0

    @property
    def subsystem_dims(self) -> tuple[int, ...]:
        return (self.dim_a, self.dim_b) + (_ATOM_DIM,) * self.n_atoms

    @property
    def dim(self) -> int:
        return math.prod(self.subsystem_dims)

    @property
    def field_dim(self) -> int:
        return self.dim_a * self.dim_b

    def field_only(self) -> "HilbertLayout":
        """Same field truncation with the atomic factors dropped."""
        return HilbertLayout(self.n_max_a, self.n_max_b, 0, self.dim_limit)

    def basis_index(self, n_a: int, n_b: int = 0, atoms: tuple[int, ...] = ()) -> int:
        """Flat index of the product basis state |n_a, n_b, i_1..i_N>."""
        occ = (n_a, n_b) + tuple(atoms)
        dims = self.subsystem_dims
        if len(occ) != len(dims):
            raise LayoutError(f"expected {len(dims)} labels, got {len(occ)}")
        idx = 0
        for o, d in zip(occ, dims):
            if not 0 <= o < d:
                raise LayoutError(f"label {o} out of range for local dimension {d}")
            idx = idx * d + o
        return idx


def _canonical(m: sp.spmatrix) -> sp.csr_matrix:
    m = sp.csr_matrix(m, dtype=np.complex128)
    m.sum_duplicates()
    m.sort_indices()
    return m


@dataclass(frozen=True)
class OperatorMatrix:
    """Sparse operator on the composite space of a :class:`HilbertLayout`."""

    layout: HilbertLayout
    entries: sp.csr_matrix
    hermitian_hint: bool = False

    def __post_init__(self):
        m = _canonical(self.entries)
        object.__setattr__(self, "entries", m)
        d = self.layout.dim
        if m.shape != (d, d):
            raise LayoutError(f"operator shape {m.shape} does not match layout dim {d}")
        if self.hermitian_hint:
            dev = herm_deviation(m)
            scale = max(abs(m.data).max(), 1.0) if m.nnz else 1.0
            if dev > 1e-12 * scale:
                raise LayoutError(
                    f"hermitian_hint set but max|M - M^dag| = {dev:.3e} "
                    f"(scale {scale:.3e})"
                )

    @property
    def dim(self) -> int:
        return self.layout.dim

    def dag(self) -> "OperatorMatrix":
        return OperatorMatrix(self.layout, self.entries.getH(), self.hermitian_hint)

    def dense(self) -> np.ndarray:
        return self.entries.toarray()

    def diagonal(self) -> np.ndarray:
        return self.entries.diagonal()

    def is_diagonal(self, tol: float = 0.0) -> bool:
        off = self.entries - sp.diags(self.entries.diagonal(), format="csr")
        if off.nnz == 0:
            return True
        return abs(off.data).max() <= tol

    def __matmul__(self, other):
        if isinstance(other, OperatorMatrix):
            _check_layouts(self.layout, other.layout)
            return OperatorMatrix(self.layout, self.entries @ other.entries)
        return self.entries @ other

    def __add__(self, other: "OperatorMatrix") -> "OperatorMatrix":
        _check_layouts(self.layout, other.layout)
        return OperatorMatrix(
            self.layout,
            self.entries + other.entries,
            self.hermitian_hint and other.hermitian_hint,
        )

    def __sub__(self, other: "OperatorMatrix") -> "OperatorMatrix":
        _check_layouts(self.layout, other.layout)
        return OperatorMatrix(
            self.layout,
            self.entries - other.entries,
            self.hermitian_hint and other.hermitian_hint,
        )

    def __mul__(self, scalar: complex) -> "OperatorMatrix":
        herm = self.hermitian_hint and (complex(scalar).imag == 0.0)
        return OperatorMatrix(self.layout, self.entries * scalar, herm)

    __rmul__ = __mul__


def herm_deviation(m: sp.spmatrix) -> float:
    """Largest entry of |M - M^dag|."""
    d = (m - m.getH()).tocoo()
    return abs(d.data).max() if d.nnz else 0.0


def _check_layouts(a: HilbertLayout, b: HilbertLayout) -> None:
    if a != b:
        raise LayoutError(f"layout mismatch: {a} vs {b}")


@dataclass(frozen=True)
class StateVector:
    """Normalized pure state on a :class:`HilbertLayout`."""

    layout: HilbertLayout
    amplitudes: np.ndarray
    normalized: bool = True

    def __post_init__(self):
        amp = np.asarray(self.amplitudes, dtype=np.complex128)
        if amp.shape != (self.layout.dim,):
            raise LayoutError(
                f"amplitude length {amp.shape} does not match layout dim {self.layout.dim}"
            )
        amp = amp.copy()
        amp.flags.writeable = False
        object.__setattr__(self, "amplitudes", amp)
        if self.normalized:
            n = np.linalg.norm(amp)
            if abs(n - 1.0) > 1e-10:
                raise LayoutError(f"state norm {n!r} deviates from 1 beyond 1e-10")

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    def overlap(self, other: "StateVector") -> complex:
        _check_layouts(self.layout, other.layout)
        return complex(np.vdot(self.amplitudes, other.amplitudes))


@dataclass(frozen=True)
class DensityMatrix:
    """Density operator; hermiticity and unit trace checked at construction.

    Positivity is monitored during dissipative propagation rather than on
    every construction (a full eigendecomposition per instance would dominate
    the runtime of long runs).
    """

    layout: HilbertLayout
    entries: np.ndarray

    def __post_init__(self):
        rho = np.asarray(self.entries, dtype=np.complex128)
        d = self.layout.dim
        if rho.shape != (d, d):
            raise LayoutError(f"density shape {rho.shape} does not match dim {d}")
        rho = rho.copy()
        dev = abs(rho - rho.conj().T).max()
        if dev > 1e-10:
            raise LayoutError(f"density not hermitian: max deviation {dev:.3e}")
        tr = np.trace(rho)
        if abs(tr - 1.0) > 1e-8:
            raise LayoutError(f"density trace {tr!r} deviates from 1 beyond 1e-8")
        rho.flags.writeable = False
        object.__setattr__(self, "entries", rho)

    @classmethod
    def from_state(cls, state: StateVector) -> "DensityMatrix":
        psi = state.amplitudes
        return cls(state.layout, np.outer(psi, psi.conj()))

    def min_eigenvalue(self) -> float:
        return float(np.linalg.eigvalsh(self.entries)[0])


# ---------------------------------------------------------------------------
# operator constructors
# ---------------------------------------------------------------------------

def destroy_local(dim: int) -> sp.csr_matrix:
    """Truncated annihilation operator on a single dim-level oscillator."""
    return _canonical(sp.diags(np.sqrt(np.arange(1, dim)), 1))


def embed(layout: HilbertLayout, local_op, subsystem: int) -> OperatorMatrix:
    """Embed a local operator as I x ... x op x ... x I in the fixed ordering.

    Subsystem indices: 0 = mode a, 1 = mode b, 2..N+1 = atoms 1..N.
    """
    dims = layout.subsystem_dims
    if not 0 <= subsystem < len(dims):
        raise LayoutError(f"subsystem {subsystem} out of range for {len(dims)} factors")
    local = _canonical(local_op)
    d = dims[subsystem]
    if local.shape != (d, d):
        raise LayoutError(
            f"local operator shape {local.shape} does not match subsystem dim {d}"
        )
    left = math.prod(dims[:subsystem])
    right = math.prod(dims[subsystem + 1:])
    m = sp.kron(sp.identity(left, format="csr"), local, format="csr")
    m = sp.kron(m, sp.identity(right, format="csr"), format="csr")
    return OperatorMatrix(layout, m)


def annihilation(layout: HilbertLayout, mode_id: str) -> OperatorMatrix:
    """Annihilation operator of a cavity mode, embedded in the full space."""
    if mode_id == "a":
        return embed(layout, destroy_local(layout.dim_a), 0)
    if mode_id == "b":
        if not layout.has_mode_b:
            raise LayoutError("mode b requested but n_max_b = 0 (mode absent)")
        return embed(layout, destroy_local(layout.dim_b), 1)
    raise LayoutError(f"unknown mode_id {mode_id!r}; expected 'a' or 'b'")


def number(layout: HilbertLayout, mode_id: str) -> OperatorMatrix:
    a = annihilation(layout, mode_id)
    return OperatorMatrix(layout, (a.entries.getH() @ a.entries), hermitian_hint=True)


def atomic_op(layout: HilbertLayout, k: int, bra_level: int, ket_level: int) -> OperatorMatrix:
    """|bra><ket| on atom k (1-based), identity on everything else."""
    if not 1 <= k <= layout.n_atoms:
        raise LayoutError(f"atom index {k} out of range 1..{layout.n_atoms}")
    if not (0 <= bra_level < _ATOM_DIM and 0 <= ket_level < _ATOM_DIM):
        raise LayoutError(f"atomic levels must be in 0..2, got ({bra_level},{ket_level})")
    local = sp.csr_matrix(
        ([1.0], ([bra_level], [ket_level])), shape=(_ATOM_DIM, _ATOM_DIM)
    )
    return embed(layout, local, 2 + (k - 1))


def sigma_plus(layout: HilbertLayout, k: int) -> OperatorMatrix:
    """Raising operator |1><2| of atom k."""
    return atomic_op(layout, k, 1, 2)


def sigma_minus(layout: HilbertLayout, k: int) -> OperatorMatrix:
    """Lowering operator |2><1| of atom k."""
    return atomic_op(layout, k, 2, 1)


def sigma_z(layout: HilbertLayout, k: int) -> OperatorMatrix:
    """|1><1| - |2><2| of atom k."""
    op = atomic_op(layout, k, 1, 1) - atomic_op(layout, k, 2, 2)
    return OperatorMatrix(layout, op.entries, hermitian_hint=True)


def identity(layout: HilbertLayout) -> OperatorMatrix:
    return OperatorMatrix(layout, sp.identity(layout.dim, format="csr"), True)


# ---------------------------------------------------------------------------
# state constructors
# ---------------------------------------------------------------------------

def product_state(
    layout: HilbertLayout,
    n_a: int = 0,
    n_b: int = 0,
    atom_levels: tuple[int, ...] | None = None,
) -> StateVector:
    """Product basis state |n_a, n_b> x |i_1..i_N>; atoms default to level 2."""
    if atom_levels is None:
        atom_levels = (2,) * layout.n_atoms
    amp = np.zeros(layout.dim, dtype=np.complex128)
    amp[layout.basis_index(n_a, n_b, tuple(atom_levels))] = 1.0
    return StateVector(layout, amp)


def vacuum(layout: HilbertLayout) -> StateVector:
    """Field vacuum with all atoms in level 2."""
    return product_state(layout)


def coherent_state(layout: HilbertLayout, mode_id: str, alpha: complex) -> StateVector:
    """Truncated (renormalized) coherent state in one mode, vacuum elsewhere."""
    n_max = layout.n_max_a if mode_id == "a" else layout.n_max_b
    if mode_id == "b" and not layout.has_mode_b:
        raise LayoutError("mode b requested but n_max_b = 0 (mode absent)")
    n = np.arange(n_max + 1)
    coeff = np.array(
        [alpha**k / math.sqrt(math.factorial(k)) for k in n], dtype=np.complex128
    )
    coeff /= np.linalg.norm(coeff)
    amp = np.zeros(layout.dim, dtype=np.complex128)
    atoms = (2,) * layout.n_atoms
    for k in n:
        idx = layout.basis_index(k, 0, atoms) if mode_id == "a" else layout.basis_index(0, k, atoms)
        amp[idx] = coeff[k]
    return StateVector(layout, amp)


def basis_labels(layout: HilbertLayout) -> np.ndarray:
    """(dim, n_subsystems) array of occupation labels in flat-index order."""
    dims = layout.subsystem_dims
    grids = np.indices(dims).reshape(len(dims), -1).T
    return grids


# ---------------------------------------------------------------------------
# expectations
# ---------------------------------------------------------------------------

def expectation(state, op: OperatorMatrix) -> complex:
    """<psi|M|psi> for a StateVector, Tr(rho M) for a DensityMatrix."""
    _check_layouts(state.layout, op.layout)
    if isinstance(state, StateVector):
        val = complex(np.vdot(state.amplitudes, op.entries @ state.amplitudes))
    elif isinstance(state, DensityMatrix):
        # Tr(rho M) = sum_ij rho_ij M_ji
        val = complex((op.entries.multiply(state.entries.T)).sum())
    else:
        raise TypeError(f"unsupported state type {type(state)!r}")
    return val


def expectation_real(state, op: OperatorMatrix) -> float:
    """Expectation of a hermitian operator; asserts the imaginary part is noise."""
    val = expectation(state, op)
    if op.hermitian_hint and abs(val.imag) > 1e-10 * max(1.0, abs(val.real)):
        raise LayoutError(
            f"hermitian expectation has imaginary part {val.imag:.3e}"
        )
    return val.real


def mode_populations_from_probs(layout: HilbertLayout, probs: np.ndarray) -> dict[str, np.ndarray]:
    """Photon-number distributions from basis-state probabilities."""
    shaped = np.asarray(probs, dtype=float).reshape(layout.subsystem_dims)
    out = {"a": shaped.sum(axis=tuple(range(1, shaped.ndim)))}
    if layout.has_mode_b:
        axes = (0,) + tuple(range(2, shaped.ndim))
        out["b"] = shaped.sum(axis=axes)
    return out


def mode_populations(layout: HilbertLayout, amplitudes: np.ndarray) -> dict[str, np.ndarray]:
    """Photon-number distributions of each mode, traced over everything else."""
    return mode_populations_from_probs(layout, np.abs(np.asarray(amplitudes)) ** 2)


def top_level_leakage_from_probs(layout: HilbertLayout, probs: np.ndarray) -> float:
    """Population in the top two Fock levels of any present mode.

    The vacuum level is never counted, so tiny cutoffs report the population
    actually pressed against the truncation boundary.
    """
    pops = mode_populations_from_probs(layout, probs)
    leak = float(pops["a"][max(layout.dim_a - 2, 1):].sum())
    if layout.has_mode_b:
        leak = max(leak, float(pops["b"][max(layout.dim_b - 2, 1):].sum()))
    return leak


def top_level_leakage(layout: HilbertLayout, amplitudes: np.ndarray) -> float:
    """Total population in the top two Fock levels of any present mode."""
    return top_level_leakage_from_probs(layout, np.abs(np.asarray(amplitudes)) ** 2)


def atom_ground_population_from_probs(layout: HilbertLayout, probs: np.ndarray) -> float:
    """Expected number of atoms found in level 0 (the eliminated level)."""
    if layout.n_atoms == 0:
        return 0.0
    shaped = np.asarray(probs, dtype=float).reshape(layout.subsystem_dims)
    total = 0.0
    for k in range(layout.n_atoms):
        axis = 2 + k
        other = tuple(i for i in range(shaped.ndim) if i != axis)
        total += float(shaped.sum(axis=other)[0])
    return total


def atom_ground_population(layout: HilbertLayout, amplitudes: np.ndarray) -> float:
    """Expected number of atoms found in level 0 (the eliminated level)."""
    return atom_ground_population_from_probs(layout, np.abs(np.asarray(amplitudes)) ** 2)
