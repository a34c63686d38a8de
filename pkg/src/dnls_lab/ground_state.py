"""Standing waves ``e^{i omega t} phi`` of ``i u_t = H u - |u|^6 u``.

``phi`` solves ``H phi + omega phi - phi^7 = 0``.  Branches bifurcate from the
lowest eigenpair ``(-E0, phi0)`` of H and are continued by Newton's method
with the banded Jacobian ``L_plus = H + omega - 7 phi^6``.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.linalg import solve_banded

from .lattice import LatticeField, fit_exponential_decay, hamiltonian_banded, load_field, save_field
from .potentials import Potential, bound_states

__all__ = [
    "NewtonDivergence",
    "NotGroundStateError",
    "GroundStateBranch",
    "bifurcation_seed",
    "residual",
    "solve_ground_state",
    "omega_derivatives",
    "default_eta",
    "lowest_state",
    "continue_branch",
    "save_branch",
    "load_branch",
]

RESIDUAL_TOL = 1e-12


class NewtonDivergence(RuntimeError):
    pass


class NotGroundStateError(ValueError):
    pass


def lowest_state(q: Potential) -> tuple[float, np.ndarray]:
    """``(E0, phi0)`` with ``phi0 > 0`` unit normalized, from the windowed H."""
    vals, vecs = bound_states(q)
    if len(vals) == 0 or vals[0] >= 0:
        raise ValueError("H has no eigenvalue below the band")
    return float(-vals[0]), vecs[0]


def bifurcation_seed(phi0: LatticeField, E0: float, omega: float) -> LatticeField:
    """Leading-order standing wave ``c(omega) phi0``, ``c = (omega-E0)^{1/6} ||phi0||_8^{-4/3}``."""
    d = omega - E0
    if d < 0:
        raise ValueError("seed requires omega > E0")
    n8 = np.sum(np.abs(phi0.values) ** 8) ** (1.0 / 8.0)
    return phi0 * (d ** (1.0 / 6.0) * n8 ** (-4.0 / 3.0))


def residual(q: Potential, omega: float, phi: np.ndarray) -> np.ndarray:
    """``H phi + omega phi - phi^7``."""
    out = (2.0 + q.values + omega) * phi - phi**7
    out[:-1] -= phi[1:]
    out[1:] -= phi[:-1]
    return out


def _residual_extended(q: Potential, omega: float, phi: np.ndarray) -> np.ndarray:
    p = phi.astype(np.longdouble)
    out = (2.0 + q.values.astype(np.longdouble) + np.longdouble(omega)) * p - p**7
    out[:-1] -= p[1:]
    out[1:] -= p[:-1]
    return out.astype(float)


def _lplus(q: Potential, omega: float, phi: np.ndarray) -> np.ndarray:
    ab = hamiltonian_banded(q.values, omega)
    ab[1] -= 7.0 * phi**6
    return ab


def solve_ground_state(
    q: Potential,
    omega: float,
    seed: LatticeField,
    tol: float = RESIDUAL_TOL,
    max_iter: int = 50,
) -> LatticeField:
    """Newton iteration for ``H phi + omega phi = phi^7`` starting at ``seed``.

    Raises
    ------
    NewtonDivergence
        No convergence within ``max_iter`` iterations.
    NotGroundStateError
        The limit is not strictly positive on the central half of the window.
    """
    phi = np.array(np.real(seed.values), dtype=float)
    res = residual(q, omega, phi)
    rn = np.linalg.norm(res)
    for _ in range(max_iter):
        if rn <= tol:
            break
        step = solve_banded((1, 1), _lplus(q, omega, phi), -res)
        t = 1.0
        while True:
            trial = phi + t * step
            r_t = residual(q, omega, trial)
            rn_t = np.linalg.norm(r_t)
            if rn_t < rn or t < 1e-4:
                break
            t *= 0.5
        phi, res, rn = trial, r_t, rn_t
    else:
        if rn > tol:
            raise NewtonDivergence(f"residual {rn:.3e} after {max_iter} iterations at omega={omega}")
    if rn > tol:
        raise NewtonDivergence(f"residual {rn:.3e} at omega={omega}")
    # iterative refinement with an extended-precision residual: the soft direction
    # of L_plus amplifies the double-precision residual floor near the bifurcation
    ab = _lplus(q, omega, phi)
    for _ in range(2):
        phi = phi + solve_banded((1, 1), ab, -_residual_extended(q, omega, phi))
    sites = q.lattice.sites
    half = max(-sites[0], sites[-1]) // 2
    central = np.abs(sites) <= half
    if not np.all(phi[central] > 0):
        raise NotGroundStateError("converged solution is not strictly positive on the central half")
    return LatticeField(q.lattice, phi)


def omega_derivatives(q: Potential, omega: float, phi: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """First and second omega-derivatives of the branch by implicit differentiation.

    ``L_plus d1 = -phi`` and ``L_plus d2 = -2 d1 + 42 phi^5 d1^2``.
    """
    ab = _lplus(q, omega, phi)
    d1 = solve_banded((1, 1), ab, -phi)
    d2 = solve_banded((1, 1), ab, -2.0 * d1 + 42.0 * phi**5 * d1**2)
    return d1, d2


def default_eta(E0: float, E1: float) -> float:
    """Branch extent keeping the internal eigenvalue clear of the continuous band.

    Along the branch the internal eigenvalue sits near ``E1 + omega - 4(omega-E0)``
    to first order, so it stays above ``4 + omega`` only while ``omega - E0`` is
    below roughly ``(E1 - 4)/4``; half of that (capped by ``E0`` and 0.1) is used.
    """
    return float(min(0.1, 0.5 * E0, 0.5 * (E1 - 4.0) / 4.0))


@dataclass
class GroundStateBranch:
    """Ground states on an increasing grid of omegas, with omega-derivatives."""

    q: Potential
    E0: float
    E1: float
    eta: float
    phi0: LatticeField
    omegas: np.ndarray
    phi: list[LatticeField]
    dphi_domega: list[LatticeField]
    mass: np.ndarray
    mass_prime: np.ndarray
    mass_prime_fd: np.ndarray
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def lattice(self):
        return self.q.lattice

    def index_of(self, omega: float) -> int | None:
        hit = np.nonzero(np.abs(self.omegas - omega) <= 1e-15 * max(1.0, abs(omega)))[0]
        return int(hit[0]) if hit.size else None

    def solve_at(self, omega: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """``(phi, dphi, d2phi)`` at any omega in the branch range, warm started."""
        key = float(omega)
        if key in self._cache:
            return self._cache[key]
        if not (self.E0 < omega):
            raise ValueError(f"omega={omega} not above E0={self.E0}")
        j = int(np.argmin(np.abs(self.omegas - omega)))
        seed_om, seed = self.omegas[j], self.phi[j].values
        last = self._cache.get("last")
        if last is not None and abs(last[0] - omega) < abs(seed_om - omega):
            seed_om, seed = last
        if abs(seed_om - omega) > 0.5 * (seed_om - self.E0):
            seed = bifurcation_seed(self.phi0, self.E0, omega).values
        else:
            seed = seed * ((omega - self.E0) / (seed_om - self.E0)) ** (1.0 / 6.0)
        phi = solve_ground_state(self.q, omega, LatticeField(self.lattice, seed)).values
        d1, d2 = omega_derivatives(self.q, omega, phi)
        if len(self._cache) > 64:
            self._cache.clear()
        self._cache[key] = (phi, d1, d2)
        self._cache["last"] = (key, phi)
        return phi, d1, d2

    def decay_fits(self):
        return [fit_exponential_decay(p) for p in self.phi]


def continue_branch(
    q: Potential,
    omega_grid=None,
    n_points: int = 8,
    eta: float | None = None,
    fd_rel_step: float = 1e-3,
) -> GroundStateBranch:
    """March Newton solutions along ``omega_grid`` (default: ``n_points`` in ``(E0, E0+eta]``)."""
    vals, vecs = bound_states(q)
    E0, phi0v = lowest_state(q)
    E1 = float(vals[-1]) if vals[-1] > 4 else float("nan")
    if eta is None:
        eta = default_eta(E0, E1 if np.isfinite(E1) else 4.0 + 4.0 * E0)
    if omega_grid is None:
        omega_grid = E0 + eta * np.arange(1, n_points + 1) / n_points
    omegas = np.asarray(omega_grid, dtype=float)
    if np.any(np.diff(omegas) <= 0) or omegas[0] <= E0:
        raise ValueError("omega grid must be increasing and above E0")
    phi0 = LatticeField(q.lattice, phi0v)
    phis, dphis, mass, mp, mp_fd = [], [], [], [], []
    seed = bifurcation_seed(phi0, E0, omegas[0])
    for om in omegas:
        if phis:
            # rescale the previous solution by the leading-order power law
            prev_om = omegas[len(phis) - 1]
            seed = phis[-1] * ((om - E0) / (prev_om - E0)) ** (1.0 / 6.0)
        phi = solve_ground_state(q, om, seed)
        ab = _lplus(q, om, phi.values)
        if np.min(np.abs(ab[1])) == 0:
            raise ZeroDivisionError("singular L_plus")
        d1, _ = omega_derivatives(q, om, phi.values)
        if not np.all(np.isfinite(d1)) or np.linalg.norm(d1) > 1e12 * np.linalg.norm(phi.values):
            raise ZeroDivisionError(f"L_plus numerically singular at omega={om} (fold point)")
        h = fd_rel_step * (om - E0)
        pp = solve_ground_state(q, om + h, phi).values
        pm = solve_ground_state(q, om - h, phi).values
        phis.append(phi)
        dphis.append(LatticeField(q.lattice, d1))
        mass.append(float(phi.values @ phi.values))
        mp.append(float(2.0 * phi.values @ d1))
        mp_fd.append(float((pp @ pp - pm @ pm) / (2.0 * h)))
    return GroundStateBranch(
        q=q,
        E0=E0,
        E1=E1,
        eta=float(eta),
        phi0=phi0,
        omegas=omegas,
        phi=phis,
        dphi_domega=dphis,
        mass=np.array(mass),
        mass_prime=np.array(mp),
        mass_prime_fd=np.array(mp_fd),
    )


def _q_hash(q: Potential) -> str:
    return hashlib.sha256(np.ascontiguousarray(q.values, dtype=float).tobytes()).hexdigest()


def save_branch(directory: str | Path, branch: GroundStateBranch) -> Path:
    """Write ``manifest.json`` plus one field file per omega (and the potential)."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    save_field(d / "potential.txt", branch.q.field, {"kind": "potential", "eps": branch.q.eps})
    save_field(d / "phi0.txt", branch.phi0, {"kind": "phi0"})
    files = []
    for k, om in enumerate(branch.omegas):
        name_p, name_d = f"phi_{k:03d}.txt", f"dphi_{k:03d}.txt"
        save_field(d / name_p, branch.phi[k], {"kind": "phi", "omega": float(om)})
        save_field(d / name_d, branch.dphi_domega[k], {"kind": "dphi", "omega": float(om)})
        files.append({"omega": float(om), "phi": name_p, "dphi": name_d})
    manifest = {
        "q_hash": _q_hash(branch.q),
        "eps": branch.q.eps,
        "E0": branch.E0,
        "E1": branch.E1,
        "eta": branch.eta,
        "grid": [float(x) for x in branch.omegas],
        "mass": [float(x) for x in branch.mass],
        "mass_prime": [float(x) for x in branch.mass_prime],
        "mass_prime_fd": [float(x) for x in branch.mass_prime_fd],
        "fields": files,
    }
    path = d / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return path


def load_branch(directory: str | Path) -> GroundStateBranch:
    d = Path(directory)
    man = json.loads((d / "manifest.json").read_text())
    qf, meta = load_field(d / "potential.txt")
    q = Potential(qf, float(meta.get("eps", 1.0)))
    if _q_hash(q) != man["q_hash"]:
        raise ValueError("potential file does not match manifest hash")
    phi0, _ = load_field(d / "phi0.txt")
    phis = [load_field(d / e["phi"])[0] for e in man["fields"]]
    dphis = [load_field(d / e["dphi"])[0] for e in man["fields"]]
    return GroundStateBranch(
        q=q,
        E0=man["E0"],
        E1=man["E1"],
        eta=man["eta"],
        phi0=phi0,
        omegas=np.array(man["grid"]),
        phi=phis,
        dphi_domega=dphis,
        mass=np.array(man["mass"]),
        mass_prime=np.array(man["mass_prime"]),
        mass_prime_fd=np.array(man["mass_prime_fd"]),
    )
