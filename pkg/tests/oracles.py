"""Independent brute-force oracles for the minimax problems.

Inner sups are maximized numerically over critic coefficients from the raw
row-level definitions; the outer problem (a quadratic in the hypothesis
parameters) is recovered exactly from a stencil of oracle evaluations and
then minimized. Nothing here calls the closed forms under test.
"""

import numpy as np
from scipy import optimize

from proxbridge.core import DiscreteActions, ObservationTable, policy_table
from proxbridge.features import PolynomialFeatures
from proxbridge.kernels import RBFKernel


def tiny_table(rng, n):
    """n rows with continuous scalar proxies, binary actions and one covariate."""
    a = rng.integers(0, 2, n)
    return ObservationTable(
        rng.normal(size=n), rng.normal(size=(n, 1)), rng.normal(size=(n, 1)), a, rng.normal(size=(n, 1)),
        DiscreteActions((0.0, 1.0)),
    )


def tiny_contrast(rng):
    return policy_table([rng.uniform(0.2, 1.0, 2)])


def tiny_features(rng):
    """Polynomial features of degree 1 on a random subset of blocks: dimension 2 or 3."""
    choices = [("proxy", "action"), ("proxy", "x"), ("proxy",), ("action", "x")]
    blocks = choices[rng.integers(len(choices))]
    return PolynomialFeatures(1, len(blocks), blocks)


def tiny_kernel():
    return RBFKernel(0.7)


# -- inner maximizations ---------------------------------------------------------


def _concave_max(fun, grad, dim):
    res = optimize.minimize(lambda b: -fun(b), np.zeros(dim), jac=lambda b: -grad(b), method="BFGS",
                            options={"gtol": 1e-13, "maxiter": 10_000})
    # polish with Newton steps on the (exact) quadratic using a finite-difference Hessian of the gradient
    b = res.x
    eye = np.eye(dim)
    for _ in range(3):
        g0 = grad(b)
        hess = np.column_stack([(grad(b + 1e-3 * e) - g0) / 1e-3 for e in eye])
        step = np.linalg.lstsq(hess, -g0, rcond=None)[0]
        b = b + step
    return fun(b)


def _ball_max(lin, gram, dim):
    """sup over {beta : beta^T gram beta <= 1} of (lin . beta)^2."""
    cons = {"type": "ineq", "fun": lambda b: 1.0 - b @ gram @ b, "jac": lambda b: -2.0 * gram @ b}
    best = 0.0
    for sign in (1.0, -1.0):
        start = np.full(dim, 1e-3) * sign
        res = optimize.minimize(lambda b: -(lin @ b), start, jac=lambda b: -lin, constraints=[cons],
                                method="SLSQP", options={"ftol": 1e-16, "maxiter": 1000})
        best = max(best, float(lin @ _polish_kkt(lin, gram, res.x)) ** 2)
    return best


def _polish_kkt(lin, gram, b):
    """Newton steps on the active-constraint KKT system lin = 2 mu G b, b^T G b = 1."""
    quad = b @ gram @ b
    if not quad > 0 or not abs(lin @ b) > 0:
        return b
    b = b / np.sqrt(quad)
    mu = (lin @ b) / 2.0
    d = b.shape[0]
    for _ in range(8):
        gb = gram @ b
        resid = np.concatenate([lin - 2 * mu * gb, [1.0 - b @ gb]])
        jac = np.zeros((d + 1, d + 1))
        jac[:d, :d] = -2 * mu * gram
        jac[:d, d] = -2 * gb
        jac[d, :d] = -2 * gb
        step = np.linalg.lstsq(jac, -resid, rcond=None)[0]
        b, mu = b + step[:d], mu + step[d]
    return b


def sieve_inner(c_rows, moment_rows, strategy, lam, gamma):
    """sup over critic f = c^T beta of the penalized (or ball-constrained) squared moment.

    ``moment_rows[i] * c_rows[i] . beta`` averages to the moment E_n[f m].
    """
    n, d = c_rows.shape

    def moment(b):
        return np.mean((c_rows @ b) * moment_rows)

    if strategy == 1:
        return _ball_max(c_rows.T @ moment_rows / n, np.eye(d), d)

    def fun(b):
        f = c_rows @ b
        return moment(b) - lam * np.mean(f**2) - gamma * b @ b

    def grad(b):
        f = c_rows @ b
        return c_rows.T @ moment_rows / n - 2 * lam * c_rows.T @ f / n - 2 * gamma * b

    return _concave_max(fun, grad, d)


def sieve_q_inner(c_rows, tc_rows, phi_rows, strategy, lam, gamma):
    """Action-bridge inner sup: moment E_n[phi f(W,A,X) - (T f)(W,X)]."""
    n, d = c_rows.shape
    lin = (c_rows.T @ phi_rows - tc_rows.sum(axis=0)) / n
    if strategy == 1:
        return _ball_max(lin, np.eye(d), d)

    def fun(b):
        return lin @ b - lam * np.mean((c_rows @ b) ** 2) - gamma * b @ b

    def grad(b):
        return lin - 2 * lam * c_rows.T @ (c_rows @ b) / n - 2 * gamma * b

    return _concave_max(fun, grad, d)


def rkhs_inner(gram, lin, strategy, lam, gamma):
    """sup over f = sum_i beta_i k(., p_i) of ``lin . beta`` with the critic penalty.

    ``lin . beta`` is the empirical moment; strategy I squares it over the
    unit ball; strategy II subtracts ``lam E_n[f^2] + (gamma / n) |f|_K^2``.
    """
    n = gram.shape[0]
    if strategy == 1:
        return _ball_max(lin, gram, n)

    def fun(b):
        f = gram @ b
        return lin @ b - lam * np.mean(f**2) - gamma / n * b @ gram @ b

    def grad(b):
        f = gram @ b
        return lin - 2 * lam * gram @ f / n - 2 * gamma / n * gram @ b

    return _concave_max(fun, grad, n)


# -- outer problem ------------------------------------------------------------------


def quadratic_from_stencil(fun, dim, scale=1.0):
    """Exact (Q, l, c) with fun(x) = x^T Q x + l^T x + c, from 1 + 2 dim + dim(dim-1)/2 evaluations."""
    c = fun(np.zeros(dim))
    eye = np.eye(dim) * scale
    plus = np.array([fun(eye[i]) for i in range(dim)])
    minus = np.array([fun(-eye[i]) for i in range(dim)])
    q = np.zeros((dim, dim))
    diag = (plus + minus - 2 * c) / (2 * scale**2)
    lin = (plus - minus) / (2 * scale)
    q[np.diag_indices(dim)] = diag
    for i in range(dim):
        for j in range(i + 1, dim):
            both = fun(eye[i] + eye[j])
            q[i, j] = q[j, i] = (both - c - diag[i] * scale**2 - diag[j] * scale**2 - lin[i] * scale
                                 - lin[j] * scale) / (2 * scale**2)
    return q, lin, c


def minimize_quadratic(q, lin):
    """A minimizer of x^T Q x + l^T x (min-norm when not unique)."""
    return -np.linalg.pinv(2 * q, rcond=1e-12) @ lin
