"""Dense linear algebra for the analytic gains.

Matrices are plain ``numpy`` float arrays. The two solvers here are

* :func:`lyap_solve` for ``A X + X A^T + Qs = 0`` by Kronecker vectorisation,
* :func:`gare_solve` for the filter-form game Riccati equation
  ``A P + P A^T + Qn - P M P = 0`` by Newton-Kleinman iteration, with
  ``M = C^T R^{-1} C - gamma^{-2} L^T S L``.

Both target small state dimensions (n <= 10); the Kronecker system is
``n^2 x n^2``.
"""

from __future__ import annotations

import numpy as np

from .errors import (
    DimensionMismatch,
    NewtonDiverged,
    NoStabilizingInit,
    SingularR,
    SingularSylvester,
)

STABLE_TOL = 1e-10
MAX_NEWTON_ITER = 200


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    """Return ``a`` as a finite 2-D float array."""
    m = np.array(a, dtype=float)
    if m.ndim == 0:
        m = m.reshape(1, 1)
    if m.ndim != 2:
        raise DimensionMismatch(f"{name} must be 2-D, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise DimensionMismatch(f"{name} has non-finite entries")
    return m


def _square(a, name):
    m = as_matrix(a, name)
    if m.shape[0] != m.shape[1]:
        raise DimensionMismatch(f"{name} must be square, got {m.shape}")
    return m


def symmetrize(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a + a.T)


def is_hurwitz(a: np.ndarray, tol: float = STABLE_TOL) -> bool:
    """True if every eigenvalue of ``a`` has real part below ``-tol``."""
    return bool(np.all(np.linalg.eigvals(a).real < -tol))


def is_pos_def(a: np.ndarray, tol: float = 0.0) -> bool:
    return bool(np.all(np.linalg.eigvalsh(symmetrize(a)) > tol))


def lyap_solve(A, Qs) -> np.ndarray:
    """Solve ``A X + X A^T + Qs = 0`` for symmetric ``X``.

    Raises :class:`SingularSylvester` if ``A`` has eigenvalues summing to
    zero, which makes the vectorised system singular.
    """
    A = _square(A, "A")
    Qs = _square(Qs, "Qs")
    n = A.shape[0]
    if Qs.shape != (n, n):
        raise DimensionMismatch(f"Qs shape {Qs.shape} does not match A {A.shape}")
    eye = np.eye(n)
    # column-major vec: vec(A X) = (I kron A) vec X, vec(X A^T) = (A kron I) vec X
    big = np.kron(eye, A) + np.kron(A, eye)
    sv = np.linalg.svd(big, compute_uv=False)
    if sv[-1] <= 1e-13 * max(sv[0], 1.0):
        raise SingularSylvester(
            f"Lyapunov operator is singular (smallest singular value {sv[-1]:.3e})"
        )
    x = np.linalg.solve(big, -Qs.reshape(-1, order="F"))
    return symmetrize(x.reshape(n, n, order="F"))


def gare_residual(A, M, Qn, P) -> np.ndarray:
    return A @ P + P @ A.T + Qn - P @ M @ P


def game_coupling(C, R, L, S, gamma: float | None) -> np.ndarray:
    """Quadratic coefficient ``C^T R^{-1} C - gamma^{-2} L^T S L``.

    ``gamma=None`` drops the game term, which gives the Kalman-Bucy
    filter Riccati equation.
    """
    C = as_matrix(C, "C")
    R = _square(R, "R")
    try:
        Rinv = np.linalg.inv(R)
    except np.linalg.LinAlgError as exc:
        raise SingularR("R is singular") from exc
    M = C.T @ Rinv @ C
    if gamma is not None:
        L = as_matrix(L, "L")
        S = _square(S, "S")
        M = M - (L.T @ S @ L) / gamma**2
    return symmetrize(M)


def _initial_iterate(A, M):
    n = A.shape[0]
    if is_hurwitz(A):
        return np.zeros((n, n))
    for k in range(17):
        P0 = float(2**k) * np.eye(n)
        if is_hurwitz(A - P0 @ M):
            return P0
    # Bass stabilizer: (A^T + s I) W + W (A + s I) = 2 M, P0 = W^-1
    shift = np.max(np.abs(np.linalg.eigvals(A).real)) + 1.0
    try:
        W = lyap_solve(-(A.T + shift * np.eye(n)), 2.0 * M)
        if is_pos_def(W):
            P0 = symmetrize(np.linalg.inv(W))
            if is_hurwitz(A - P0 @ M):
                return P0
    except (SingularSylvester, np.linalg.LinAlgError):
        pass
    raise NoStabilizingInit(
        "no P0 = c*I (c = 1..2^16) or Lyapunov stabilizer makes A - P0 M Hurwitz; "
        "the attenuation level may be infeasible"
    )


def care_newton(A, Mp, Qn, *, max_iter: int = MAX_NEWTON_ITER, tol: float | None = None) -> np.ndarray:
    """Newton-Kleinman for ``A Z + Z A^T + Qn - Z Mp Z = 0`` with ``Mp >= 0``.

    From a stabilizing start each iterate solves the Lyapunov equation
    ``(A - Z_k Mp) Z + Z (A - Z_k Mp)^T + Qn + Z_k Mp Z_k = 0``.
    """
    n = A.shape[0]
    tol = 1e-12 * (1.0 + np.linalg.norm(Qn)) if tol is None else tol
    Z = _initial_iterate(A, Mp)
    res = np.linalg.norm(gare_residual(A, Mp, Qn, Z))
    if res == 0.0:
        return Z
    for _ in range(max_iter):
        try:
            Z_new = lyap_solve(A - Z @ Mp, Qn + Z @ Mp @ Z)
        except SingularSylvester as exc:
            raise NewtonDiverged("Newton-Kleinman iterate lost stability") from exc
        res_new = np.linalg.norm(gare_residual(A, Mp, Qn, Z_new))
        step = np.linalg.norm(Z_new - Z)
        Z = Z_new
        if not np.isfinite(res_new):
            break
        # stop when converged or at the rounding floor
        if step <= 1e-14 * max(np.linalg.norm(Z), 1e-300) or (res_new <= tol and res_new >= 0.5 * res):
            return Z
        res = res_new
    if not np.isfinite(res) or res > 1e3 * tol:
        raise NewtonDiverged(f"Newton-Kleinman residual {res:.3e} did not converge")
    return Z


def split_sign(M):
    """``M = Mp - Mn`` with ``Mp, Mn`` positive semidefinite."""
    vals, vecs = np.linalg.eigh(symmetrize(M))
    Mp = (vecs * np.clip(vals, 0.0, None)) @ vecs.T
    Mn = (vecs * np.clip(-vals, 0.0, None)) @ vecs.T
    return symmetrize(Mp), symmetrize(Mn)


def gare_solve(A, M, Qn, *, max_iter: int = MAX_NEWTON_ITER, history: list | None = None) -> np.ndarray:
    """Stabilizing solution of ``A P + P A^T + Qn - P M P = 0``.

    ``M`` may be indefinite. Write ``M = Mp - Mn``; starting from
    ``P_0 = 0`` each outer step adds the stabilizing solution ``Z_k`` of
    the sign-definite equation

        (A - P_k M) Z + Z (A - P_k M)^T - Z Mp Z + Res(P_k) = 0,

    solved by Newton-Kleinman. Then ``Res(P_{k+1}) = Z_k Mn Z_k >= 0`` and
    ``P_k`` increases monotonically. With ``Mn = 0`` a single outer step
    is plain Newton-Kleinman on the filter Riccati equation.

    Residual Frobenius norms (``P_0`` first) are appended to ``history``.
    Raises :class:`NoStabilizingInit` or :class:`NewtonDiverged`; both
    usually mean the attenuation level is too small for the plant.
    """
    A = _square(A, "A")
    M = symmetrize(_square(M, "M"))
    Qn = symmetrize(_square(Qn, "Qn"))
    n = A.shape[0]
    if M.shape != (n, n) or Qn.shape != (n, n):
        raise DimensionMismatch("A, M and Qn must share the same square shape")

    tol = 1e-9 * (1.0 + np.linalg.norm(Qn))
    Mp, _ = split_sign(M)
    P = np.zeros((n, n))
    Res = Qn.copy()
    res = np.linalg.norm(Res)
    if history is not None:
        history.append(res)
    for _ in range(max_iter):
        Z = care_newton(A - P @ M, Mp, symmetrize(Res))
        P = symmetrize(P + Z)
        Res = gare_residual(A, M, Qn, P)
        res_new = np.linalg.norm(Res)
        if history is not None:
            history.append(res_new)
        if not np.isfinite(res_new):
            res = res_new
            break
        converged = np.linalg.norm(Z) <= 1e-14 * np.linalg.norm(P) or (res_new <= tol and res_new >= 0.5 * res)
        res = res_new
        if converged or res == 0.0:
            break
    if not np.isfinite(res) or res > tol:
        raise NewtonDiverged(
            f"GARE residual {res:.3e} above tolerance {tol:.3e}; "
            "the attenuation level may be infeasible"
        )
    if not is_hurwitz(A - P @ M) or not is_pos_def(P):
        raise NewtonDiverged(
            "GARE solution is not stabilizing/positive definite; "
            "the attenuation level may be infeasible"
        )
    return P
