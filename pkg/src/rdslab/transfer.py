"""Fiberwise transfer operators on circle grids and an exact preimage-tree oracle.

The discretized operator for one base symbol is a sparse N x N matrix built
from the inverse branches of the target nodes, the potential weights at the
branch points, and the periodic interpolation stencil.  Orbit iterates are
step-wise compositions (cost n * N * deg); the depth-n preimage tree (cost
N * deg^n) is kept only as the ground-truth oracle.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .base import BasePoint
from .fiber import (
    GridFunction,
    SystemSpec,
    apply_map_symbol,
    alpha_norm,
    interp_order,
    interp_stencil,
    inverse_branches_symbol,
    potential_values,
)


class TransferError(RuntimeError):
    pass


class SymbolOperator:
    """Discretized transfer operator for one base symbol."""

    def __init__(self, spec: SystemSpec, e: int, n_points: int, interp: str,
                 newton_tol: float = 1e-13):
        n = n_points
        nodes = np.arange(n) / n
        zb = inverse_branches_symbol(spec, e, nodes, newton_tol=newton_tol)
        self.branch_points = zb
        self.phi_weights = np.exp(potential_values(spec, e, zb))  # (d, n)
        d = zb.shape[0]
        idx, wts = interp_stencil(zb.ravel(), n, interp)  # (k, d*n)
        rows = np.tile(np.arange(n), d)
        k = idx.shape[0]
        full_rows = np.broadcast_to(rows, (k, d * n)).ravel()
        data = (wts * self.phi_weights.ravel()[None, :]).ravel()
        self.matrix = sp.csr_matrix((data, (full_rows, idx.ravel())), shape=(n, n))
        self.matrix_t = sp.csr_matrix(self.matrix.T)
        # per-branch interpolation matrices, for branch-resolved (perturbed) applies
        self.branch_interp = []
        self.branch_interp_t = []
        for b in range(d):
            ib, wb = idx[:, b * n : (b + 1) * n], wts[:, b * n : (b + 1) * n]
            r = np.broadcast_to(np.arange(n), (k, n)).ravel()
            s = sp.csr_matrix((wb.ravel(), (r, ib.ravel())), shape=(n, n))
            self.branch_interp.append(s)
            self.branch_interp_t.append(sp.csr_matrix(s.T))

    def apply(self, u: np.ndarray) -> np.ndarray:
        """L u at the target nodes, branch-resolved summation."""
        out = None
        for b, s in enumerate(self.branch_interp):
            term = self.phi_weights[b] * (s @ u)
            out = term if out is None else out + term
        return out

    def apply_perturbed(self, u: np.ndarray, phase: np.ndarray) -> np.ndarray:
        """L(e^{i r g} u) with phase = exp(i r g(branch_points)), shape (d, n)."""
        out = None
        for b, s in enumerate(self.branch_interp):
            term = (self.phi_weights[b] * phase[b]) * (s @ u)
            out = term if out is None else out + term
        return out

    def adjoint(self, omega: np.ndarray) -> np.ndarray:
        """L^T acting on quadrature weights (the measure pullback step)."""
        return self.matrix_t @ omega

    def adjoint_batch(self, omegas: np.ndarray) -> np.ndarray:
        return omegas @ self.matrix

    def apply_batch(self, us: np.ndarray) -> np.ndarray:
        return us @ self.matrix_t

    def apply_perturbed_batch(self, us: np.ndarray, phase: np.ndarray) -> np.ndarray:
        """Rows of L(e^{i r g} u); phase has shape (d, n) as in apply_perturbed."""
        out = None
        for b, st in enumerate(self.branch_interp_t):
            term = (self.phi_weights[b] * phase[b])[None, :] * (us @ st)
            out = term if out is None else out + term
        return out


class OperatorTable:
    """Per-symbol operator cache for a fixed (spec, grid, interpolation)."""

    def __init__(self, spec: SystemSpec, n_points: int = 1024, interp: str = "cubic",
                 newton_tol: float = 1e-13):
        self.spec = spec
        self.n_points = int(n_points)
        self.interp = interp
        self.ops = {e: SymbolOperator(spec, e, self.n_points, interp, newton_tol=newton_tol)
                    for e in spec.alphabet}

    def op(self, e: int) -> SymbolOperator:
        return self.ops[int(e)]

    def nodes(self) -> np.ndarray:
        return np.arange(self.n_points) / self.n_points

    def phase_at_branches(self, e: int, observable, r: float) -> np.ndarray:
        zb = self.ops[e].branch_points
        return np.exp(1j * r * observable.values_for_symbol(e, zb))


@dataclass
class OrbitOperator:
    """Record of an orbit-composed operator: fibers start .. shift^depth(start)."""

    start: BasePoint
    depth: int
    kind: str
    r_sequence: tuple = ()
    lambda_chain: tuple = ()

    @property
    def end(self) -> BasePoint:
        return self.start.shift_by(self.depth)

    def compose(self, other: "OrbitOperator") -> "OrbitOperator":
        if other.start != self.end:
            raise TransferError("composition fibers do not match")
        if other.kind != self.kind:
            raise TransferError("composition kinds do not match")
        return OrbitOperator(
            self.start,
            self.depth + other.depth,
            self.kind,
            self.r_sequence + other.r_sequence,
            self.lambda_chain + other.lambda_chain,
        )


def _check_fiber(u: GridFunction, x: BasePoint):
    if u.fiber is not None and u.fiber != x:
        raise TransferError("grid function lives on a different fiber")


def transfer_apply(table: OperatorTable, x: BasePoint, u: GridFunction, kind="raw",
                   lam=None, r=0.0, observable=None) -> GridFunction:
    """One transfer step from the fiber over x to the fiber over shift(x, 1)."""
    _check_fiber(u, x)
    e = x.symbol(0)
    op = table.op(e)
    if kind == "raw":
        vals = op.apply(u.values)
    elif kind == "normalized":
        vals = op.apply(u.values) / lam
    elif kind == "perturbed":
        phase = table.phase_at_branches(e, observable, r)
        vals = op.apply_perturbed(u.values, phase) / lam
    else:
        raise TransferError(f"unknown kind {kind!r}")
    return GridFunction(vals, interp=u.interp, fiber=x.shift_by(1) if u.fiber is not None else None)


def transfer_iterate(table: OperatorTable, x: BasePoint, u: GridFunction, n: int, kind="raw",
                     lambda_chain=None, r_sequence=None, observable=None) -> GridFunction:
    """n-fold orbit composition; normalized/perturbed divide by the lambda chain."""
    if kind in ("normalized", "perturbed"):
        if lambda_chain is None or len(lambda_chain) < n:
            raise TransferError("lambda_chain of length n required")
    if kind == "perturbed":
        if r_sequence is None or len(r_sequence) != n:
            raise TransferError("r_sequence must have length n")
        if observable is None:
            raise TransferError("perturbed kind requires the observable")
    out = u
    y = x
    for j in range(int(n)):
        out = transfer_apply(
            table, y, out, kind=kind,
            lam=None if kind == "raw" else lambda_chain[j],
            r=0.0 if r_sequence is None else r_sequence[j],
            observable=observable,
        )
        y = y.shift_by(1)
    return out


def oracle_transfer(spec: SystemSpec, x: BasePoint, u, n: int, w, kind="raw",
                    lambda_chain=None, r_sequence=None, observable=None,
                    branch_budget: int = 10**6, newton_tol: float = 1e-13):
    """Exact (L^n u)(w) by full preimage-tree enumeration, no grids.

    u must be evaluable at arbitrary points (a callable or a GridFunction,
    whose interpolation then defines the function being transported).  The
    enumeration carries Birkhoff sums of the potential, and of r_j g along
    the forward path for the perturbed kind.
    """
    pts = np.atleast_1d(np.asarray(w, dtype=np.float64))
    m0 = len(pts)
    s_phi = np.zeros(m0)
    s_g = np.zeros(m0)
    total_branches = m0
    for j in range(int(n) - 1, -1, -1):
        e = x.symbol(j)
        total_branches *= spec.branch_count[e]
        if total_branches > branch_budget:
            raise TransferError(f"preimage tree exceeds budget at depth {n - j} ({total_branches} branches)")
        z = inverse_branches_symbol(spec, e, pts, newton_tol=newton_tol)
        s_phi = (s_phi[None, :] + potential_values(spec, e, z)).ravel()
        if kind == "perturbed":
            s_g = (s_g[None, :] + r_sequence[j] * observable.values_for_symbol(e, z)).ravel()
        pts = z.ravel()
    uv = u(pts)
    weights = np.exp(s_phi)
    leaves = uv * weights
    if kind == "perturbed":
        leaves = leaves * np.exp(1j * s_g)
    per_w = leaves.reshape(-1, m0).sum(axis=0)
    if kind in ("normalized", "perturbed"):
        per_w = per_w / np.prod(np.asarray(lambda_chain[:n], dtype=np.float64))
    return per_w[0] if np.ndim(w) == 0 else per_w


def projection_Q(u: GridFunction, nu, rho_target: GridFunction) -> GridFunction:
    """Rank-one projection Q^n u = (integral of u d nu) * rho at the target fiber."""
    w = np.asarray(getattr(nu, "weights", nu), dtype=np.float64)
    mass = w @ u.values
    return GridFunction(mass * rho_target.values, interp=u.interp, fiber=rho_target.fiber)


def forward_phase_sum(spec: SystemSpec, x: BasePoint, z: np.ndarray, r_sequence, observable) -> np.ndarray:
    """sum_j r_j g over the forward orbit, evaluated in closed form (no grids)."""
    z = np.asarray(z, dtype=np.float64)
    total = np.zeros_like(z)
    y = x
    for r in r_sequence:
        e = y.symbol(0)
        total = total + r * observable.values_for_symbol(e, z)
        z = apply_map_symbol(spec, e, z)
        y = y.shift_by(1)
    return total


def chain_error_budget(n_points: int, depth: int, interp: str) -> float:
    """Grid-route discrepancy budget for the perturbed-chain identity.

    Calibrated safety envelope: both grid routes differ by accumulated
    interpolation error of oscillatory integrands, growing with depth and
    shrinking at the interpolation order.  The constant absorbs the phase
    derivatives at the default frequency scale.
    """
    return 200.0 * depth * (64.0 / n_points) ** interp_order(interp)


def perturbed_chain_identity_check(lab, x: BasePoint, u, r_sequence, observable=None,
                                   method: str = "oracle", n_probes: int = 16) -> float:
    """Max discrepancy between the composed perturbed chain and its closed form.

    Both sides of

        L_{r_{n-1}} o ... o L_{r_0} (u)  =  L_0^n( e^{i sum r_j g o T^j} u )

    share one lambda chain, so the identity is exact modulo discretization.
    method="oracle" evaluates both sides by preimage-tree enumeration at
    probe points (discrepancy is pure floating-point rearrangement);
    method="grid" compares the two step-wise grid routes, whose discrepancy
    is bounded by chain_error_budget.
    """
    spec = lab.spec
    obs = observable if observable is not None else lab.observable
    n = len(r_sequence)
    chain = lab.lambda_chain(x, n)
    if method == "oracle":
        # golden-ratio probe points: deterministic and equidistributed
        probes = np.sort((np.arange(1, n_probes + 1) * 0.6180339887498949) % 1.0)
        if not callable(u):
            raise TransferError("oracle method needs an evaluable function")
        f = u
        lhs = oracle_transfer(spec, x, f, n, probes, kind="perturbed",
                              lambda_chain=chain, r_sequence=r_sequence, observable=obs)

        def modulated(z):
            return np.exp(1j * forward_phase_sum(spec, x, z, r_sequence, obs)) * f(z)

        rhs = oracle_transfer(spec, x, modulated, n, probes, kind="normalized", lambda_chain=chain)
        return float(np.max(np.abs(lhs - rhs)))
    if method == "grid":
        if not isinstance(u, GridFunction):
            raise TransferError("grid method needs a GridFunction")
        lhs = transfer_iterate(lab.table, x, u, n, kind="perturbed",
                               lambda_chain=chain, r_sequence=r_sequence, observable=obs)
        nodes = lab.table.nodes()
        phase = forward_phase_sum(spec, x, nodes, r_sequence, obs)
        v0 = GridFunction(np.exp(1j * phase) * u.values, interp=u.interp, fiber=u.fiber)
        rhs = transfer_iterate(lab.table, x, v0, n, kind="normalized", lambda_chain=chain)
        return float(np.max(np.abs(lhs.values - rhs.values)))
    raise TransferError(f"unknown method {method!r}")


def operator_norm_bounds_check(lab, x_samples, r_grid, n_max: int, seed: int = 0,
                               functions_per_sample: int = 2) -> dict:
    """Empirical uniform bounds for the perturbed iterates.

    For every sampled x, r in r_grid and n <= n_max, measures
    ||L_r^n f||_inf / ||f||_inf on f = 1 and ||L_r^n h||_alpha / ||h||_alpha
    on random smooth h, and fits the growth slope of the per-n envelopes.
    Contract: both envelopes stay bounded (log-slope <= 0.01).
    """
    from . import rng as _rng

    spec = lab.spec
    hp = spec.holder
    table = lab.table
    nodes = table.nodes()
    gen = _rng.generator(seed, 0x0B0D)
    sup_env = np.zeros(n_max)
    alpha_env = np.zeros(n_max)
    c_inf = 0.0
    for x in x_samples:
        chain = lab.lambda_chain(x, n_max)
        tests = [GridFunction(np.ones(table.n_points), interp=table.interp)]
        for _ in range(functions_per_sample):
            a = gen.normal(size=3) * [0.5, 0.3, 0.2]
            b = gen.normal(size=3) * [0.5, 0.3, 0.2]
            vals = np.ones_like(nodes)
            for k in range(3):
                vals = vals + a[k] * np.cos(2 * np.pi * (k + 1) * nodes) + b[k] * np.sin(2 * np.pi * (k + 1) * nodes)
            tests.append(GridFunction(vals, interp=table.interp))
        for r in r_grid:
            for f in tests:
                f_inf = f.sup_norm()
                f_alpha = alpha_norm(f, hp.alpha, hp.eta)
                cur = GridFunction(f.values.astype(complex), interp=f.interp)
                for n in range(1, n_max + 1):
                    cur = transfer_apply(table, x.shift_by(n - 1), cur, kind="perturbed",
                                         lam=chain[n - 1], r=r, observable=lab.observable)
                    sup_ratio = cur.sup_norm() / f_inf
                    alpha_ratio = alpha_norm(cur, hp.alpha, hp.eta) / f_alpha
                    sup_env[n - 1] = max(sup_env[n - 1], sup_ratio)
                    alpha_env[n - 1] = max(alpha_env[n - 1], alpha_ratio)
                    if r == 0 and f_inf == 1.0 and np.all(f.values == 1.0):
                        c_inf = max(c_inf, cur.sup_norm())
    ns = np.arange(1, n_max + 1, dtype=float)
    sup_slope = float(np.polyfit(ns, np.log(sup_env), 1)[0])
    alpha_slope = float(np.polyfit(ns, np.log(alpha_env), 1)[0])
    return {
        "sup_envelope": sup_env.tolist(),
        "alpha_envelope": alpha_env.tolist(),
        "c_fitted": float(max(sup_env.max(), 1.0)),
        "c_inf_on_one": float(max(c_inf, 1.0)),
        "sup_slope": sup_slope,
        "alpha_slope": alpha_slope,
        "bounded": bool(sup_slope <= 0.01 and alpha_slope <= 0.01),
        "n_max": int(n_max),
        "r_grid": [float(r) for r in r_grid],
        "q_tilde": hp.Q_tilde,
    }
