"""Equal-weight atom clouds as finite-second-moment distributions.

Provides the two integration pairings mu(phi) and mu (x) mu(psi), exact
Wasserstein-2 between equal-size clouds, and the step-to-step continuity
profile of a measure flow.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import IO, Callable, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

DEFAULT_ASSIGNMENT_CAP = 64


@dataclass(frozen=True)
class EmpiricalMeasure:
    """Cloud of n equally weighted atoms in R^d."""

    atoms: np.ndarray  # (n, d)

    def __post_init__(self) -> None:
        atoms = np.asarray(self.atoms, dtype=float)
        if atoms.ndim == 1:
            atoms = atoms[:, None]
        if atoms.ndim != 2 or atoms.shape[0] < 1:
            raise ValueError("atoms must be a non-empty (n, d) array")
        if not np.isfinite(atoms).all():
            raise ValueError("atoms must be finite")
        atoms = atoms.copy()
        atoms.flags.writeable = False
        object.__setattr__(self, "atoms", atoms)

    @property
    def n_atoms(self) -> int:
        return self.atoms.shape[0]

    @property
    def dim(self) -> int:
        return self.atoms.shape[1]

    def second_moment(self) -> float:
        return float(np.mean(np.sum(self.atoms**2, axis=1)))

    def shifted(self, v) -> "EmpiricalMeasure":
        return EmpiricalMeasure(self.atoms + np.asarray(v, dtype=float))

    def write_csv(self, fp: IO[str]) -> None:
        fp.write(",".join(f"x_{i + 1}" for i in range(self.dim)) + "\n")
        for row in self.atoms:
            fp.write(",".join(repr(float(v)) for v in row) + "\n")


def bare_measure(atoms: np.ndarray) -> EmpiricalMeasure:
    """Wrap an already-validated (n, d) float array without copy or checks.

    For hot simulation loops only; callers must not mutate the array
    afterwards."""
    m = object.__new__(EmpiricalMeasure)
    object.__setattr__(m, "atoms", atoms)
    return m


def integrate(mu: EmpiricalMeasure, phi: Callable[[np.ndarray], np.ndarray]):
    """mu(phi) = (1/n) sum_i phi(x_i).

    phi must be vectorized over the leading axis: atoms (n, d) -> (n,) or
    (n, p).  Returns a float for scalar phi, an array for vector phi.
    """
    vals = np.asarray(phi(mu.atoms), dtype=float)
    if vals.ndim == 0:
        if not np.isfinite(vals):
            raise ValueError("phi produced a non-finite value")
        return float(vals)
    if vals.shape[0] != mu.n_atoms:
        raise ValueError(
            f"phi must map (n, d) atoms to (n, ...) values, got shape {vals.shape}"
        )
    if not np.isfinite(vals).all():
        raise ValueError("phi produced non-finite values on the atoms")
    out = vals.mean(axis=0)
    return float(out) if out.ndim == 0 else out


def integrate_pair(mu: EmpiricalMeasure, psi: Callable[[np.ndarray, np.ndarray], np.ndarray]) -> float:
    """mu (x) mu(psi) = (1/n^2) sum_ij psi(x_i, x_j), diagonal included.

    psi must broadcast over atom pairs: ((n,1,d), (1,n,d)) -> (n, n).
    """
    n = mu.n_atoms
    left = mu.atoms[:, None, :]
    right = mu.atoms[None, :, :]
    vals = np.asarray(psi(left, right), dtype=float)
    vals = np.broadcast_to(vals, (n, n))
    if not np.isfinite(vals).all():
        raise ValueError("psi produced non-finite values on atom pairs")
    return float(vals.mean())


def wasserstein2(
    mu: EmpiricalMeasure,
    nu: EmpiricalMeasure,
    assignment_cap: int = DEFAULT_ASSIGNMENT_CAP,
    method: str = "auto",
) -> float:
    """Exact W_2 between two clouds with the same atom count.

    d = 1 uses the sorted-quantile pairing; d > 1 solves the optimal
    assignment exactly, which is only allowed up to `assignment_cap` atoms.
    """
    if mu.n_atoms != nu.n_atoms:
        raise ValueError("wasserstein2 compares clouds with equal atom counts only")
    if mu.dim != nu.dim:
        raise ValueError("dimension mismatch")
    if method not in ("auto", "sorted", "assignment"):
        raise ValueError(f"unknown method {method!r}")
    if method == "sorted" and mu.dim != 1:
        raise ValueError("sorted-quantile method applies to d=1 only")
    if method == "auto":
        method = "sorted" if mu.dim == 1 else "assignment"
    if method == "sorted":
        a = np.sort(mu.atoms[:, 0])
        b = np.sort(nu.atoms[:, 0])
        return float(np.sqrt(np.mean((a - b) ** 2)))
    if mu.n_atoms > assignment_cap:
        raise ValueError(
            f"exact assignment limited to {assignment_cap} atoms "
            f"(got {mu.n_atoms}); subsample the clouds first"
        )
    diff = mu.atoms[:, None, :] - nu.atoms[None, :, :]
    cost = np.sum(diff**2, axis=2)
    rows, cols = linear_sum_assignment(cost)
    return float(np.sqrt(cost[rows, cols].sum() / mu.n_atoms))


def flow_continuity_profile(flow: Sequence[EmpiricalMeasure]) -> np.ndarray:
    """W_2 distances between consecutive measures of a flow."""
    if len(flow) < 2:
        return np.zeros(0)
    return np.array([wasserstein2(flow[k], flow[k + 1]) for k in range(len(flow) - 1)])
