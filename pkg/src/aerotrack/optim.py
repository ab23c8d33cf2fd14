"""Damped Gauss-Newton (Levenberg-Marquardt) for small dense problems."""

from dataclasses import dataclass, field

import numpy as np


@dataclass
class LMResult:
    x: np.ndarray
    cost: float
    iterations: int
    converged: bool
    costs: list = field(default_factory=list)


def levenberg_marquardt(fun, x0, max_iter=50, xtol=1e-10, gtol=1e-12, mu0=1e-3):
    """Minimize ``0.5 * ||r(x)||^2``.

    Parameters
    ----------
    fun : callable
        ``fun(x) -> (r, J)`` returning the residual vector and its Jacobian.
    x0 : array_like
        Starting point.
    max_iter : int
        Maximum number of Jacobian evaluations.
    xtol : float
        Converged when the accepted step satisfies
        ``||dx|| <= xtol * (||x|| + xtol)``.
    gtol : float
        Converged when ``max |J^T r| <= gtol``.
    mu0 : float
        Initial damping, as a multiple of ``diag(J^T J)``.

    Returns
    -------
    LMResult
        ``costs`` holds the objective after every accepted step, starting
        with the initial cost; it is non-increasing by construction.
    """
    x = np.array(x0, dtype=float)
    r, J = fun(x)
    cost = 0.5 * float(r @ r)
    costs = [cost]
    A = J.T @ J
    g = J.T @ r
    mu = mu0  # damping is relative to diag(J^T J), so it starts dimensionless
    nu = 2.0
    if cost == 0.0 or (g.size and np.max(np.abs(g)) <= gtol):
        return LMResult(x, cost, 0, True, costs)

    for it in range(1, max_iter + 1):
        while True:
            diag = np.maximum(np.diag(A), 1e-12)
            try:
                h = np.linalg.solve(A + mu * np.diag(diag), -g)
            except np.linalg.LinAlgError:
                mu *= nu
                nu *= 2.0
                continue
            x_new = x + h
            r_new, J_new = fun(x_new)
            cost_new = 0.5 * float(r_new @ r_new)
            predicted = 0.5 * float(h @ (mu * diag * h - g))
            small_step = np.linalg.norm(h) <= xtol * (np.linalg.norm(x) + xtol)
            if np.isfinite(cost_new) and cost_new <= cost:
                rho = (cost - cost_new) / predicted if predicted > 0 else 0.0
                x, r, J, cost = x_new, r_new, J_new, cost_new
                costs.append(cost)
                A = J.T @ J
                g = J.T @ r
                mu *= max(1.0 / 3.0, 1.0 - (2.0 * rho - 1.0) ** 3)
                nu = 2.0
                if small_step or cost == 0.0 or np.max(np.abs(g)) <= gtol:
                    return LMResult(x, cost, it, True, costs)
                break
            if small_step:
                # rejected step already below tolerance: at a minimum to precision
                return LMResult(x, cost, it, True, costs)
            mu *= nu
            nu *= 2.0
            if not np.isfinite(mu) or mu > 1e30:
                return LMResult(x, cost, it, False, costs)
    return LMResult(x, cost, max_iter, False, costs)
