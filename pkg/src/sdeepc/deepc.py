"""Regularized DeePC problem assembly and its first-order solver.

The per-step optimization is

    min_g  1/2 ||A g - b||^2 + lambda_g ||g||_1
    s.t.   lo <= Uf g <= hi                     (optional box)

with A the row-stack [sqrt(lambda_y) Up; sqrt(lambda_y) Yp; sqrt(R) Uf;
sqrt(Q) Yf] and b the matching stack of (u_ini, y_ini, u_r, y_r).  The
solver is an alternating-direction splitting with a cached normal-equation
factorization, soft-threshold prox for the l1 term and clipping for the
box.  Converged solutions are required to pass an explicit l1 subgradient
certificate; the check is asserted, not assumed.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .behavior import HankelBlocks
from .errors import DimensionMismatch


@dataclass(frozen=True)
class SolverSettings:
    # None picks rho from the data spectrum: sqrt(sigma_min_pos^2 * lam),
    # floored at sigma_min_pos^2 (empirically near-optimal for the badly
    # scaled stacks produced by soft initial-condition weights ~1e5)
    rho: Optional[float] = None
    alpha: float = 1.6  # over-relaxation
    eps_abs: float = 1e-6
    eps_rel: float = 1e-5
    max_iter: int = 10000
    # residual-balancing rho adaptation: raw-ratio doubling/halving
    # without a box, scale-normalized multiplicative updates with one
    adaptive_rho: bool = True
    check_interval: int = 25
    # a solve reports converged only when the l1 subgradient condition
    # holds to within certificate_factor * (eps_abs + eps_rel * ||A'b||_inf)
    certificate_factor: float = 1.0


@dataclass(frozen=True)
class DeePCProblem:
    """One receding-horizon optimization instance."""

    blocks: HankelBlocks
    u_ini: np.ndarray
    y_ini: np.ndarray
    u_r: np.ndarray
    y_r: np.ndarray
    q_weight: float = 100.0
    r_weight: float = 1.0
    lambda_g: float = 0.0
    lambda_y: float = 1e5
    input_bounds: Optional[Tuple[np.ndarray, np.ndarray]] = None

    def __post_init__(self):
        blocks = self.blocks
        object.__setattr__(self, "u_ini", np.asarray(self.u_ini, dtype=float).reshape(-1))
        object.__setattr__(self, "y_ini", np.asarray(self.y_ini, dtype=float).reshape(-1))
        object.__setattr__(self, "u_r", np.asarray(self.u_r, dtype=float).reshape(-1))
        object.__setattr__(self, "y_r", np.asarray(self.y_r, dtype=float).reshape(-1))
        expect = {
            "u_ini": blocks.m * blocks.t_ini,
            "y_ini": blocks.p * blocks.t_ini,
            "u_r": blocks.m * blocks.t_f,
            "y_r": blocks.p * blocks.t_f,
        }
        for name, size in expect.items():
            vec = getattr(self, name)
            if vec.shape[0] != size:
                raise DimensionMismatch(
                    f"{name} has length {vec.shape[0]}, expected {size}"
                )
        for name in ("q_weight", "r_weight", "lambda_g", "lambda_y"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        if self.input_bounds is not None:
            lo = np.asarray(self.input_bounds[0], dtype=float).reshape(-1)
            hi = np.asarray(self.input_bounds[1], dtype=float).reshape(-1)
            if lo.shape[0] != blocks.m or hi.shape[0] != blocks.m:
                raise DimensionMismatch("input bounds must give one (lo, hi) per channel")
            if np.any(lo > hi):
                raise ValueError("input bounds must satisfy lo <= hi componentwise")
            object.__setattr__(self, "input_bounds", (lo, hi))

    def stacked(self) -> Tuple[np.ndarray, np.ndarray]:
        """(A, b) of the least-squares part."""
        a = stack_data_matrix(
            self.blocks, self.q_weight, self.r_weight, self.lambda_y
        )
        b = stack_target(
            self.u_ini, self.y_ini, self.u_r, self.y_r,
            self.q_weight, self.r_weight, self.lambda_y,
        )
        return a, b


def stack_data_matrix(
    blocks: HankelBlocks, q_weight: float, r_weight: float, lambda_y: float
) -> np.ndarray:
    sy = np.sqrt(lambda_y)
    return np.vstack(
        [
            sy * blocks.up,
            sy * blocks.yp,
            np.sqrt(r_weight) * blocks.uf,
            np.sqrt(q_weight) * blocks.yf,
        ]
    )


def stack_target(
    u_ini, y_ini, u_r, y_r, q_weight: float, r_weight: float, lambda_y: float
) -> np.ndarray:
    sy = np.sqrt(lambda_y)
    return np.concatenate(
        [sy * u_ini, sy * y_ini, np.sqrt(r_weight) * u_r, np.sqrt(q_weight) * y_r]
    )


def assemble(
    blocks: HankelBlocks,
    u_ini: np.ndarray,
    y_ini: np.ndarray,
    reference: np.ndarray,
    weights: Tuple[float, float] = (100.0, 1.0),
    lambda_g: float = 0.0,
    bounds: Optional[Tuple[np.ndarray, np.ndarray]] = None,
    lambda_y: float = 1e5,
    u_reference: Optional[np.ndarray] = None,
) -> DeePCProblem:
    """Build one DeePC instance.

    `reference` is the future output reference: either a p-vector held
    constant over the horizon or a full p*T_f vector.  The input reference
    defaults to zero.
    """
    reference = np.asarray(reference, dtype=float).reshape(-1)
    if reference.shape[0] == blocks.p:
        reference = np.tile(reference, blocks.t_f)
    u_r = (
        np.zeros(blocks.m * blocks.t_f)
        if u_reference is None
        else np.asarray(u_reference, dtype=float).reshape(-1)
    )
    q_weight, r_weight = weights
    return DeePCProblem(
        blocks=blocks,
        u_ini=u_ini,
        y_ini=y_ini,
        u_r=u_r,
        y_r=reference,
        q_weight=q_weight,
        r_weight=r_weight,
        lambda_g=lambda_g,
        lambda_y=lambda_y,
        input_bounds=bounds,
    )


@dataclass
class ControlSolution:
    g: np.ndarray
    u_f: np.ndarray
    y_f: np.ndarray
    objective: float
    iterations: int
    status: str  # converged | max_iter | infeasible
    primal_residual: float
    dual_residual: float


def objective_value(a: np.ndarray, b: np.ndarray, lam: float, g: np.ndarray) -> float:
    r = a @ g - b
    return float(0.5 * (r @ r) + lam * np.sum(np.abs(g)))


def l1_certificate_violation(
    a: np.ndarray,
    b: np.ndarray,
    lam: float,
    g: np.ndarray,
    constraint_grad: Optional[np.ndarray] = None,
) -> float:
    """Worst-coordinate violation of the subgradient optimality condition.

    Checks that every coordinate of A'(Ag - b) + constraint dual lies in
    -lam * subdifferential of ||g||_1, i.e. equals -lam*sign(g_i) on the
    support and has magnitude <= lam off it.
    """
    grad = a.T @ (a @ g - b)
    if constraint_grad is not None:
        grad = grad + constraint_grad
    on = g != 0.0
    viol = 0.0
    if np.any(on):
        viol = float(np.max(np.abs(grad[on] + lam * np.sign(g[on]))))
    if np.any(~on):
        off_viol = float(np.max(np.maximum(np.abs(grad[~on]) - lam, 0.0)))
        viol = max(viol, off_viol)
    return viol


def _soft_threshold(v: np.ndarray, kappa: float) -> np.ndarray:
    return np.sign(v) * np.maximum(np.abs(v) - kappa, 0.0)


class AdmmSolver:
    """Operator-splitting solver with a cached spectral decomposition.

    A controller reuses one instance across receding-horizon steps: the
    data matrix (hence the normal-equation machinery) is fixed, only the
    target b and the l1 weight change per step.  Without a box constraint
    the g-update is applied through a one-time economy SVD of A (Woodbury
    form), so changing the penalty parameter rho costs nothing; with a box
    the update falls back to cached Cholesky factors, one per rho.

    A solve reports "converged" only when the l1 subgradient optimality
    certificate (and, with a box, primal feasibility of Uf g) holds at the
    returned iterate; the residual history is reported but is not the
    stopping criterion.
    """

    def __init__(
        self,
        a: np.ndarray,
        constraint_matrix: Optional[np.ndarray] = None,
        lo: Optional[np.ndarray] = None,
        hi: Optional[np.ndarray] = None,
        settings: SolverSettings = SolverSettings(),
    ):
        self.a = np.asarray(a, dtype=float)
        self.n = self.a.shape[1]
        self.settings = settings
        # economy SVD; rank defines the positive spectrum used for rho
        _, sing, vt = np.linalg.svd(self.a, full_matrices=False)
        keep = sing > 1e-12 * (sing[0] if sing.size else 1.0)
        self._sing = sing[keep]
        self._vt = np.ascontiguousarray(vt[keep])
        self.sigma_max = float(self._sing[0]) if self._sing.size else 0.0
        self.sigma_min_pos = float(self._sing[-1]) if self._sing.size else 1.0
        if constraint_matrix is not None:
            self.f = np.asarray(constraint_matrix, dtype=float)
            self.lo = np.asarray(lo, dtype=float).reshape(-1)
            self.hi = np.asarray(hi, dtype=float).reshape(-1)
            if self.f.shape[1] != self.n:
                raise DimensionMismatch("constraint matrix width mismatch")
            if self.lo.shape[0] != self.f.shape[0] or self.hi.shape[0] != self.f.shape[0]:
                raise DimensionMismatch("bound vectors must match constraint rows")
            # small-form Woodbury pieces: with C = [sqrt(rho) F; A] the
            # g-update matrix is rho I + C^T C, inverted through the
            # (rows(F)+rows(A))-sized Gram matrix rho I + C C^T
            self._fft = self.f @ self.f.T
            self._fat = self.f @ self.a.T
            self._aat = self.a @ self.a.T
        else:
            self.f = None
            self.lo = self.hi = None
        self._factors: dict = {}
        # boxed warm start carries the dual blocks and rho between the
        # sequential solves of a receding-horizon loop
        self._warm_dual: Optional[Tuple[np.ndarray, np.ndarray, float]] = None

    def _default_rho(self, lam: float) -> float:
        base = self.sigma_min_pos**2
        if self.f is not None:
            # the boxed update factors rho I + C C^T, whose conditioning is
            # sigma_max^2 / rho: the geometric mean of the extreme
            # curvatures balances the splitting and keeps the factor
            # well-posed even when the spectrum spans many decades
            return max(self.sigma_max * self.sigma_min_pos, self._rho_floor())
        return max(base, float(np.sqrt(base * max(lam, 0.0))))

    def _rho_floor(self) -> float:
        if self.f is not None:
            return max(1e-10 * self.sigma_max**2, 1e-8)
        return 1e-8

    # supports larger than this skip the active-set shortcut (the reduced
    # normal equations would cost more than the splitting iterations save)
    _POLISH_CAP = 320

    def _polish(
        self, b: np.ndarray, atb: np.ndarray, lam: float,
        idx: np.ndarray, signs: np.ndarray, cert_tol: float,
    ) -> Optional[Tuple[np.ndarray, float]]:
        """Exact solve on a candidate support, accepted only if the full
        l1 KKT conditions verify: on-support gradient equals -lam*sign with
        consistent signs, off-support gradient magnitudes stay below lam."""
        if idx.size == 0 or idx.size > self._POLISH_CAP:
            return None
        a_s = self.a[:, idx]
        rhs = atb[idx] - lam * signs
        gram = a_s.T @ a_s
        try:
            g_s = np.linalg.solve(gram, rhs)
        except np.linalg.LinAlgError:
            g_s, *_ = np.linalg.lstsq(gram, rhs, rcond=None)
        if np.any(g_s * signs < 0.0):
            return None
        grad = self.a.T @ (a_s @ g_s - b)
        on_viol = float(np.max(np.abs(grad[idx] + lam * signs)))
        off = np.ones(self.n, dtype=bool)
        off[idx] = False
        off_viol = float(np.max(np.maximum(np.abs(grad[off]) - lam, 0.0))) if np.any(off) else 0.0
        viol = max(on_viol, off_viol)
        if viol > cert_tol:
            return None
        g = np.zeros(self.n)
        g[idx] = g_s
        return g, viol

    def _g_update(self, rhs: np.ndarray, rho: float) -> np.ndarray:
        """argmin_g 1/2||Ag-b||^2 + rho/2 ||...||^2 normal-equation solve."""
        if self.f is None:
            s2 = self._sing**2
            return rhs / rho - self._vt.T @ ((s2 / (rho * (s2 + rho))) * (self._vt @ rhs))
        fac = self._factors.get(rho)
        if fac is None:
            sr = float(np.sqrt(rho))
            gram = np.block(
                [[rho * self._fft, sr * self._fat], [sr * self._fat.T, self._aat]]
            )
            gram[np.diag_indices_from(gram)] += rho
            fac = (cho_factor(gram), sr)
            self._factors[rho] = fac
        cho, sr = fac
        y = np.concatenate([sr * (self.f @ rhs), self.a @ rhs])
        sol = cho_solve(cho, y)
        k = self.f.shape[0]
        return (rhs - sr * (self.f.T @ sol[:k]) - self.a.T @ sol[k:]) / rho

    def solve(
        self, b: np.ndarray, lam: float, g0: Optional[np.ndarray] = None
    ) -> ControlSolution:
        b = np.asarray(b, dtype=float).reshape(-1)
        s = self.settings
        if self.f is not None and np.any(self.lo > self.hi):
            z = np.zeros(self.n)
            return self._result(z, b, lam, 0, "infeasible", np.inf, np.inf)
        if lam == 0.0 and self.f is None:
            g, *_ = np.linalg.lstsq(self.a, b, rcond=None)
            return self._result(g, b, lam, 0, "converged", 0.0, 0.0)

        atb = self.a.T @ b
        cert_tol = s.certificate_factor * (
            s.eps_abs + s.eps_rel * max(float(np.max(np.abs(atb))), lam, 1e-12)
        )
        rho = s.rho if s.rho is not None else self._default_rho(lam)
        z1 = np.zeros(self.n) if g0 is None else np.array(g0, dtype=float)
        has_box = self.f is not None
        if not has_box and g0 is not None:
            # sequential solves usually keep their support: one exact
            # reduced solve replaces the whole splitting run when it holds
            idx = np.flatnonzero(z1)
            polished = self._polish(b, atb, lam, idx, np.sign(z1[idx]), cert_tol)
            if polished is not None:
                return self._result(polished[0], b, lam, 0, "converged", 0.0, 0.0)
        w1 = np.zeros(self.n)
        # over-relaxation accelerates the unconstrained splitting; with a
        # box it degenerates the primal residual at lam=0 (z1 tracks g
        # exactly) and stalls degenerate supports, so the boxed iteration
        # runs unrelaxed
        alpha = s.alpha if not has_box else 1.0
        if has_box:
            z2 = np.clip(self.f @ z1, self.lo, self.hi)
            w2 = np.zeros(self.f.shape[0])
            box_tol = s.eps_abs + s.eps_rel * float(np.max(np.abs(self.hi - self.lo)))
            rho_lo, rho_hi = 1e-6 * rho, 1e10 * rho
            if g0 is not None and self._warm_dual is not None:
                # sequential solves differ only in b: the previous duals
                # and rho are near-feasible starts
                w1, w2, rho = self._warm_dual
                w1 = w1.copy()
                w2 = w2.copy()
        g = z1
        status = "max_iter"
        it = 0
        r_norm = d_norm = np.inf
        for it in range(1, s.max_iter + 1):
            rhs = atb + rho * (z1 - w1)
            if has_box:
                rhs = rhs + rho * (self.f.T @ (z2 - w2))
            g = self._g_update(rhs, rho)
            gh = alpha * g + (1.0 - alpha) * z1
            z1_old = z1
            z1 = _soft_threshold(gh + w1, lam / rho)
            w1 = w1 + gh - z1
            if has_box:
                fg = self.f @ g
                fgh = alpha * fg + (1.0 - alpha) * z2
                z2_old = z2
                z2 = np.clip(fgh + w2, self.lo, self.hi)
                w2 = w2 + fgh - z2
            if it % s.check_interval == 0:
                r1 = g - z1
                d_vec = rho * (z1 - z1_old)
                if has_box:
                    r2 = fg - z2
                    r_norm = float(np.sqrt(r1 @ r1 + r2 @ r2))
                    d_norm = float(
                        np.linalg.norm(d_vec + rho * (self.f.T @ (z2 - z2_old)))
                    )
                    nu = rho * w2
                    cgrad = self.f.T @ nu
                    fz1 = self.f @ z1
                    box_viol = float(
                        np.max(np.abs(fz1 - np.clip(fz1, self.lo, self.hi)))
                    )
                else:
                    r_norm = float(np.linalg.norm(r1))
                    d_norm = float(np.linalg.norm(d_vec))
                    cgrad = None
                    box_viol = 0.0
                viol = l1_certificate_violation(self.a, b, lam, z1, cgrad)
                if viol <= cert_tol and box_viol <= (box_tol if has_box else 0.0):
                    status = "converged"
                    break
                if not has_box:
                    idx = np.flatnonzero(z1)
                    polished = self._polish(
                        b, atb, lam, idx, np.sign(z1[idx]), cert_tol
                    )
                    if polished is not None:
                        return self._result(
                            polished[0], b, lam, it, "converged", float(r_norm), float(d_norm)
                        )
                if s.adaptive_rho and not has_box:
                    # raw residual balancing, doubling/halving
                    if r_norm > 10.0 * d_norm and rho < 1e8:
                        rho *= 2.0
                        w1 = w1 / 2.0
                    elif d_norm > 10.0 * r_norm and rho > 2.0 * self._rho_floor():
                        rho /= 2.0
                        w1 = w1 * 2.0
                elif s.adaptive_rho:
                    # scale-normalized residual ratio (new factor per rho is
                    # cheap here); skipped when either residual sits at its
                    # numerical floor, where the ratio carries no signal
                    r_sc = max(
                        float(np.linalg.norm(g)),
                        float(np.linalg.norm(z1)) + float(np.linalg.norm(z2)),
                        1e-12,
                    )
                    d_sc = max(
                        float(np.linalg.norm(atb)),
                        float(np.linalg.norm(self.a.T @ (self.a @ z1))),
                        float(np.linalg.norm(rho * w1))
                        + float(np.linalg.norm(rho * (self.f.T @ w2))),
                        1e-12,
                    )
                    r_rel = r_norm / r_sc
                    d_rel = d_norm / d_sc
                    if r_rel > 1e-14 and d_rel > 1e-14:
                        ratio = float(np.sqrt(r_rel / d_rel))
                        if ratio > 5.0 or ratio < 0.2:
                            ratio = float(np.clip(ratio, 0.01, 100.0))
                            new_rho = float(np.clip(rho * ratio, rho_lo, rho_hi))
                            if new_rho != rho:
                                w1 = w1 * (rho / new_rho)
                                w2 = w2 * (rho / new_rho)
                                rho = new_rho
        if has_box:
            self._warm_dual = (w1, w2, rho)
        return self._result(z1, b, lam, it, status, float(r_norm), float(d_norm))

    def _result(self, g, b, lam, iterations, status, r_norm, d_norm):
        return ControlSolution(
            g=g,
            u_f=np.empty(0),
            y_f=np.empty(0),
            objective=objective_value(self.a, b, lam, g),
            iterations=iterations,
            status=status,
            primal_residual=r_norm,
            dual_residual=d_norm,
        )


def solve(
    problem: DeePCProblem, settings: SolverSettings = SolverSettings()
) -> ControlSolution:
    """Solve one assembled DeePC instance from scratch.

    Receding-horizon loops should reuse an AdmmSolver via DeePCController
    instead; this convenience entry refactors the normal equations on
    every call.
    """
    a, b = problem.stacked()
    blocks = problem.blocks
    if problem.input_bounds is not None:
        lo = np.tile(problem.input_bounds[0], blocks.t_f)
        hi = np.tile(problem.input_bounds[1], blocks.t_f)
        solver = AdmmSolver(a, blocks.uf, lo, hi, settings)
    else:
        solver = AdmmSolver(a, settings=settings)
    sol = solver.solve(b, problem.lambda_g)
    sol.u_f = blocks.uf @ sol.g
    sol.y_f = blocks.yf @ sol.g
    return sol
