"""Matrix HJB solver for finite-regime models.

Writing eta for the per-state frozen consumption rates and Q for the chain
generator, the candidate value function is V(x, i) = x^(1-R)/(1-R) * f_i
where f > 0 solves the matrix HJB equation

    A f = f^(1 - 1/R),      A = diag(eta) - Q / R

(the power acts entrywise).  The problem is well-posed exactly when A is a
nonsingular M-matrix; then the equation has a unique positive solution, the
optimal consumption fraction is xi = f^(-1/R) and the risky weight is
pi = lambda / (R sigma) per state.

With p = 1 - 1/R in (-1, 1) (that is, R > 1/2), T x = A^-1 x^p contracts the
log-sup metric d(x, y) = ||log x - log y||_inf at rate |p| and the iteration
from the invariant-box corner converges geometrically.  For R <= 1/2 a
damped Newton method is used instead.
"""

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.linalg

from .errors import ConvergenceError, IllPosedError, NotMMatrixError, SingularMatrixError
from .linalg import MCertificate, TridiagonalOperator, check_nonsingular_m_matrix
from .model import RegimeModel

__all__ = [
    "HjbSolution",
    "QuickChecks",
    "WellPosednessReport",
    "assemble_A",
    "check_wellposed",
    "solve_hjb_fixed_point",
    "solve_hjb_newton",
    "solve_matrix_hjb",
    "solve_regime",
    "cyclic_wellposed",
    "nearest_neighbour_wellposed",
    "value_and_policies",
]

_TINY = 1e-300


@dataclass
class HjbSolution:
    """Positive HJB solution with policies and iteration diagnostics.

    ``f`` is the value-function factor, ``u = f^(-1/R)`` the optimal
    consumption rate, ``pi_hat`` the risky weight (None until policies are
    attached), ``trace`` the per-iteration log-sup step sizes, ``residual``
    the recomputed ||A f - f^p||_inf with scale ``residual_scale`` =
    ||f^p||_inf.
    """

    f: np.ndarray
    u: np.ndarray
    p: float
    iterations: int
    trace: np.ndarray
    residual: float
    residual_scale: float
    method: str
    pi_hat: Optional[np.ndarray] = None
    certificate: Optional[MCertificate] = None

    @property
    def R(self):
        return 1.0 / (1.0 - self.p)

    def value(self, x, state=None):
        """Candidate value x^(1-R)/(1-R) * f at one state or all states."""
        R = self.R
        factor = self.f if state is None else self.f[int(state)]
        return x ** (1.0 - R) / (1.0 - R) * factor


@dataclass
class QuickChecks:
    """Cheap sign-based screens; conclusive flags agree with the verdict.

    All eta positive implies well-posed; all eta nonpositive implies
    ill-posed; eta_i <= -(off-diagonal row sum)/R at some state makes the
    diagonal of A nonpositive there, which also implies ill-posed
    (``dominance_failure_index`` is the first such state).
    """

    all_eta_positive: bool
    all_eta_nonpositive: bool
    dominance_failure_index: Optional[int]


@dataclass
class WellPosednessReport:
    verdict: bool
    certificate: MCertificate
    quick_checks: QuickChecks
    eta: np.ndarray

    def to_dict(self):
        cert = {
            "verdict": self.certificate.verdict,
            "method": self.certificate.method,
            "failure_index": self.certificate.failure_index,
            "note": self.certificate.note,
        }
        if self.certificate.ratios is not None:
            cert["ratios"] = np.asarray(self.certificate.ratios).tolist()
        return {
            "verdict": self.verdict,
            "certificate": cert,
            "quick_checks": {
                "all_eta_positive": self.quick_checks.all_eta_positive,
                "all_eta_nonpositive": self.quick_checks.all_eta_nonpositive,
                "dominance_failure_index": self.quick_checks.dominance_failure_index,
            },
            "eta": np.asarray(self.eta).tolist(),
        }


def assemble_A(model):
    """Dense HJB matrix diag(eta) - Q / R for a regime model."""
    if not isinstance(model, RegimeModel):
        raise TypeError("assemble_A expects a RegimeModel")
    return np.diag(model.eta()) - model.Q / model.R


def check_wellposed(model, method="minor_ratios"):
    """Well-posedness verdict with an M-matrix certificate and quick screens."""
    if not isinstance(model, RegimeModel):
        raise TypeError(
            "check_wellposed applies to regime models; discretize a diffusion model "
            "with assemble_discrete_hjb and certify the resulting matrix instead"
        )
    eta = model.eta()
    off_row_sums = model.Q.sum(axis=1) - np.diag(model.Q)
    dominated = eta + off_row_sums / model.R
    failure = np.flatnonzero(dominated <= 0.0)
    quick = QuickChecks(
        all_eta_positive=bool(np.all(eta > 0.0)),
        all_eta_nonpositive=bool(np.all(eta <= 0.0)),
        dominance_failure_index=int(failure[0]) if failure.size else None,
    )
    certificate = check_nonsingular_m_matrix(assemble_A(model), method=method)
    return WellPosednessReport(
        verdict=certificate.verdict, certificate=certificate, quick_checks=quick, eta=eta
    )


def _linear_solver(A):
    """(matvec, solve-with-reused-factorization, size) for dense or tridiagonal A."""
    if isinstance(A, TridiagonalOperator):
        return A.matvec, A.factorized(), A.n
    dense = np.asarray(A, dtype=float)
    if dense.ndim != 2 or dense.shape[0] != dense.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {dense.shape}")
    lu, piv = scipy.linalg.lu_factor(dense, check_finite=False)
    if np.any(np.diag(lu) == 0.0):
        raise SingularMatrixError("singular matrix in HJB solve")
    return dense.dot, (lambda rhs: scipy.linalg.lu_solve((lu, piv), rhs, check_finite=False)), dense.shape[0]


def _fixed_point_box(c_min, c_max, p):
    """Invariant box [m, M] for T x = A^-1 x^p from c = extrema of A^-1 1."""
    if p >= 0.0:
        e = 1.0 / (1.0 - p)
        return c_min**e, c_max**e
    e = 1.0 / (1.0 - p * p)
    return (c_min * c_max**p) ** e, (c_min**p * c_max) ** e


def _iteration_cap(m_box, M_box, p, tol):
    """Worst-case iteration count for accuracy tol*(1-|p|) in the log-sup metric."""
    ap = abs(p)
    if ap == 0.0:
        return 1
    spread = M_box * M_box / m_box - M_box
    if not spread > 0.0:
        return 1
    eps = tol * (1.0 - ap)
    bound = (math.log(eps) - math.log(spread)) / math.log(ap)
    return max(1, math.ceil(bound))


def solve_hjb_fixed_point(A, p, tol=1e-10, x1=None):
    """Solve A x = x^p by the contraction T x = A^-1 x^p, p in (-1, 1).

    Starts from the lower corner of the invariant box (unless ``x1`` is
    given) and stops when the log-sup step is at most tol * (1 - |p|), which
    leaves the iterate within tol of the fixed point in that metric.  For
    p outside (-1, 1) raises ValueError advising :func:`solve_hjb_newton`.
    """
    if not -1.0 < p < 1.0:
        raise ValueError(
            f"p = {p} outside (-1, 1): the iteration does not contract; use solve_hjb_newton"
        )
    matvec, solve, n = _linear_solver(A)
    ones = np.ones(n)
    w = solve(ones)
    if not np.all(w > 0.0):
        raise NotMMatrixError("A^-1 1 has nonpositive entries; A is not an M-matrix")
    c_min, c_max = float(w.min()), float(w.max())

    if p == 0.0:
        residual = float(np.max(np.abs(matvec(w) - ones)))
        return HjbSolution(
            f=w,
            u=w ** (p - 1.0),
            p=p,
            iterations=1,
            trace=np.array([0.0]),
            residual=residual,
            residual_scale=1.0,
            method="fixed_point",
        )

    m_box, M_box = _fixed_point_box(c_min, c_max, p)
    if x1 is None:
        x = np.full(n, m_box)
        cap = _iteration_cap(m_box, M_box, p, tol) + 32
    else:
        x = np.asarray(x1, dtype=float)
        if x.shape != (n,) or not np.all(x > 0.0):
            raise ValueError("x1 must be a strictly positive vector of matching size")
        cap = 16 * (_iteration_cap(m_box, M_box, p, tol) + 32)

    ap = abs(p)
    trace = []
    log_x = np.log(x)
    for _ in range(cap):
        x_next = solve(x**p)
        if not np.all(x_next > 0.0):
            raise NotMMatrixError("iteration left the positive cone; A is not an M-matrix")
        log_next = np.log(x_next)
        step = float(np.max(np.abs(log_next - log_x)))
        trace.append(step)
        x, log_x = x_next, log_next
        if step <= tol * (1.0 - ap):
            break
    else:
        raise ConvergenceError(
            f"fixed point not converged after {cap} iterations", last_iterate=x
        )
    rhs = x**p
    residual = float(np.max(np.abs(matvec(x) - rhs)))
    return HjbSolution(
        f=x,
        u=x ** (p - 1.0),
        p=p,
        iterations=len(trace),
        trace=np.array(trace),
        residual=residual,
        residual_scale=float(np.max(np.abs(rhs))),
        method="fixed_point",
    )


def _newton_jacobian_solve(A, x, p, fx):
    diag_shift = p * x ** (p - 1.0)
    if isinstance(A, TridiagonalOperator):
        J = TridiagonalOperator(A.sub, A.main - diag_shift, A.sup)
        return J.solve(-fx)
    dense = np.asarray(A, dtype=float) - np.diag(diag_shift)
    try:
        return np.linalg.solve(dense, -fx)
    except np.linalg.LinAlgError as exc:
        raise SingularMatrixError(f"singular Newton system: {exc}") from exc


def solve_hjb_newton(A, p, tol=1e-10, x0=None, max_iterations=100):
    """Damped Newton for A x = x^p, any p < 1 (covers R <= 1/2).

    For p <= 0 the map F(x) = A x - x^p is componentwise concave and the
    Jacobian A - diag(p x^(p-1)) adds a positive diagonal to A, hence stays
    a nonsingular M-matrix on the positive cone.  Started from a point with
    F(x0) <= 0, the Newton sequence is then monotonically increasing and
    converges to the minimal positive root without damping; the default
    start m * 1 with m = min over rows i with (A 1)_i > 0 of
    (A 1)_i^(-1/(1-p)) satisfies F(m 1) <= 0 by construction.

    For p in (0, 1), F is componentwise convex instead, and the safe side
    flips: starting from the upper corner M * 1 of the contraction's
    invariant box, F(x0) >= 0 holds, every iterate stays a supersolution
    above the root, and there the Jacobian keeps the root as a positive
    image (J(x) x* >= (1 - p) x*^p > 0), so it remains a nonsingular
    M-matrix and the sequence decreases monotonically to the root.  A
    lower start is unsafe in this regime: x^(p-1) blows up near 0 and
    Newton can stall at a spurious small-component point.

    Steps are still halved (at most 60 times) if an iterate would leave
    the positive cone, which only engages for custom starts.
    Non-convergence raises :class:`ConvergenceError` with the last iterate
    attached.
    """
    if not p < 1.0:
        raise ValueError(f"p = {p} must be < 1")
    matvec, solve, n = _linear_solver(A)
    if x0 is None:
        w = solve(np.ones(n))
        if not np.all(w > 0.0):
            raise NotMMatrixError("A^-1 1 has nonpositive entries; A is not an M-matrix")
        if p <= 0.0:
            image = matvec(np.ones(n))
            positive = image[image > 0.0]
            m = float(np.min(positive ** (-1.0 / (1.0 - p)))) if positive.size else 1.0
            x = np.full(n, m)
        else:
            x = np.full(n, _fixed_point_box(float(w.min()), float(w.max()), p)[1])
    else:
        x = np.asarray(x0, dtype=float)
        if x.shape != (n,) or not np.all(x > 0.0):
            raise ValueError("x0 must be a strictly positive vector of matching size")

    trace = []
    for iteration in range(max_iterations):
        rhs = x**p
        fx = matvec(x) - rhs
        residual = float(np.max(np.abs(fx)))
        scale = float(np.max(np.abs(rhs)))
        if residual <= tol * max(scale, _TINY):
            return HjbSolution(
                f=x,
                u=x ** (p - 1.0),
                p=p,
                iterations=iteration,
                trace=np.array(trace),
                residual=residual,
                residual_scale=scale,
                method="newton",
            )
        step = _newton_jacobian_solve(A, x, p, fx)
        t = 1.0
        for _ in range(60):
            if np.all(x + t * step > 0.0):
                break
            t *= 0.5
        else:
            raise ConvergenceError(
                "Newton step could not be damped into the positive cone", last_iterate=x
            )
        x = x + t * step
        trace.append(float(np.max(np.abs(t * step))))
    raise ConvergenceError(
        f"Newton not converged after {max_iterations} iterations", last_iterate=x
    )


def solve_matrix_hjb(A, R, tol=1e-10):
    """Certify A, then dispatch on R: contraction for R > 1/2, Newton otherwise.

    Raises :class:`IllPosedError` carrying the failed certificate when A is
    not a nonsingular M-matrix.
    """
    certificate = check_nonsingular_m_matrix(A)
    if not certificate.verdict:
        raise IllPosedError(
            "matrix HJB is ill-posed: A is not a nonsingular M-matrix",
            report=certificate,
        )
    p = 1.0 - 1.0 / R
    if -1.0 < p < 1.0:
        solution = solve_hjb_fixed_point(A, p, tol=tol)
    else:
        solution = solve_hjb_newton(A, p, tol=tol)
    solution.certificate = certificate
    return solution


def cyclic_wellposed(eta, q, R):
    """Well-posedness of the single-cycle chain (state i jumps to i+1 at rate q_i).

    Requires eta_i > -q_i / R for every i (otherwise ill-posed); then the
    verdict is sum_i log1p(R eta_i / q_i) > 0, the log form of the product
    criterion prod_i (1 + (R/q_i) eta_i) > 1.
    """
    eta = np.asarray(eta, dtype=float)
    q = np.asarray(q, dtype=float)
    if eta.shape != q.shape or eta.ndim != 1:
        raise ValueError("eta and q must be 1-d arrays of equal length")
    if np.any(q <= 0.0):
        raise ValueError("cycle rates q must be positive")
    if R <= 0.0:
        raise ValueError("R must be positive")
    if np.any(eta <= -q / R):
        return False
    return bool(np.sum(np.log1p(R * eta / q)) > 0.0)


def nearest_neighbour_wellposed(eta, q_minus, q_plus, R):
    """Well-posedness of a birth-death chain via the minor-ratio recursion.

    ``q_minus[i]``/``q_plus[i]`` are the down/up jump rates of state i, with
    the boundary convention q_minus[0] = 0 and q_plus[-1] = 0.  Returns
    (verdict, ratios); the ratios are the leading-minor ratios of
    diag(eta) - Q/R and the verdict is their positivity.  On failure the
    ratio sequence is truncated at the first nonpositive entry.
    """
    eta = np.asarray(eta, dtype=float)
    q_minus = np.asarray(q_minus, dtype=float)
    q_plus = np.asarray(q_plus, dtype=float)
    n = eta.shape[0]
    if q_minus.shape != (n,) or q_plus.shape != (n,):
        raise ValueError("eta, q_minus, q_plus must have equal length")
    if q_minus[0] != 0.0 or q_plus[-1] != 0.0:
        raise ValueError("boundary convention requires q_minus[0] = 0 and q_plus[-1] = 0")
    if np.any(q_minus < 0.0) or np.any(q_plus < 0.0):
        raise ValueError("jump rates must be nonnegative")
    if R <= 0.0:
        raise ValueError("R must be positive")

    ratios = []
    r = eta[0] + q_plus[0] / R
    ratios.append(r)
    for i in range(1, n):
        if not r > _TINY:
            break
        r = eta[i] + (q_minus[i] + q_plus[i]) / R - q_plus[i - 1] * q_minus[i] / (R * R * r)
        ratios.append(r)
    ratios = np.array(ratios)
    return bool(ratios.size == n and np.all(ratios > 0.0)), ratios


def value_and_policies(model, f):
    """Attach optimal policies to a positive factor vector f.

    Returns an :class:`HjbSolution` with u = f^(-1/R), pi = lambda/(R sigma)
    and the recomputed equation residual.
    """
    if not isinstance(model, RegimeModel):
        raise TypeError("value_and_policies expects a RegimeModel")
    f = np.asarray(f, dtype=float)
    if f.shape != (model.n_states,) or not np.all(f > 0.0):
        raise ValueError("f must be a strictly positive vector, one entry per state")
    p = 1.0 - 1.0 / model.R
    A = assemble_A(model)
    rhs = f**p
    residual = float(np.max(np.abs(A.dot(f) - rhs)))
    return HjbSolution(
        f=f,
        u=f ** (-1.0 / model.R),
        p=p,
        iterations=0,
        trace=np.array([]),
        residual=residual,
        residual_scale=float(np.max(np.abs(rhs))),
        method="direct",
        pi_hat=model.lam / (model.R * model.sigma),
    )


def solve_regime(model, tol=1e-10):
    """Certify well-posedness, solve the matrix HJB, attach policies.

    Raises :class:`IllPosedError` carrying the report when certification
    fails, per the refuse-then-report contract.
    """
    report = check_wellposed(model)
    if not report.verdict:
        raise IllPosedError("regime problem is ill-posed", report=report)
    A = assemble_A(model)
    solution = solve_matrix_hjb(A, model.R, tol=tol)
    solution.pi_hat = model.lam / (model.R * model.sigma)
    solution.certificate = report.certificate
    return solution
