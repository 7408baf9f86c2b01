"""Lax pair of the fast lattice and the slow observables built from it.

With ``A_k = sqrt(U_k)`` the fast field is equivalent to ``dL/ds = [B, L]``
for ``s = -sigma/2``, where ``L`` is the periodic Jacobi matrix carrying
``A_k`` on the first off-diagonals and ``B`` the antisymmetric matrix on the
second ones. Traces of even powers of ``L`` are therefore first integrals.

Observables are labelled ``j = 1 .. N/2 + 1`` (1-based, matching ``v_j``):
``v_j = tr L^{2j}`` for ``j <= N/2`` and ``v_{N/2+1} = prod U_k``.

Traces are always formed from explicit matrix powers. The commonly quoted
closed-form degree-6 polynomial (``closed_form_trace6``) does not reproduce the
trace (72 vs 132 at the all-ones state) and is kept only so the discrepancy
stays visible in the test-suite.
"""

from __future__ import annotations

import numpy as np
from numpy.typing import ArrayLike

from .dynamics import State, as_state, diffusion_stencil
from .errors import InvalidInput


def n_observables(n: int) -> int:
    return n // 2 + 1


def _lax_stack(u: np.ndarray) -> np.ndarray:
    """Lax matrices for a stack of states, shape (..., N) -> (..., N, N)."""
    n = u.shape[-1]
    a = np.sqrt(u)
    k = np.arange(n)
    kp = (k + 1) % n
    out = np.zeros(u.shape[:-1] + (n, n))
    out[..., k, kp] = a
    out[..., kp, k] = a
    return out


def lax_matrix(state: State | ArrayLike) -> np.ndarray:
    """Symmetric ``L`` with ``L[k, k+1] = L[k+1, k] = A_k`` (mod N)."""
    return _lax_stack(as_state(state).u)


def b_matrix(state: State | ArrayLike) -> np.ndarray:
    """Antisymmetric ``B`` with ``B[k, k+2] = A_k A_{k+1}`` and ``B[k, k-2] = -A_{k-1} A_{k-2}``."""
    u = as_state(state).u
    n = u.size
    a = np.sqrt(u)
    b = np.zeros((n, n))
    for k in range(n):
        b[k, (k + 2) % n] = a[k] * a[(k + 1) % n]
        b[k, (k - 2) % n] = -a[(k - 1) % n] * a[(k - 2) % n]
    return b


def commutator(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    return x @ y - y @ x


def trace_power(state: State | ArrayLike, p: int, *, allow_odd: bool = False) -> float:
    """``tr L^p`` from repeated multiplication.

    Only even ``p`` in ``[2, N]`` are observables; ``allow_odd`` lifts the
    restriction for diagnostics (odd traces vanish identically).
    """
    u = as_state(state).u
    n = u.size
    if not isinstance(p, (int, np.integer)) or p < 1:
        raise InvalidInput(f"trace power must be a positive integer, got {p!r}")
    if not allow_odd and (p % 2 or p < 2 or p > n):
        raise InvalidInput(f"trace power must be even in [2, {n}], got {p}")
    lax = lax_matrix(u)
    return float(np.trace(np.linalg.matrix_power(lax, int(p))))


def product_invariants(state: State | ArrayLike) -> tuple[float, float, float]:
    """(prod of all, prod of even-numbered U_2 U_4 .., prod of odd-numbered U_1 U_3 ..)."""
    u = as_state(state).u
    return float(np.prod(u)), float(np.prod(u[1::2])), float(np.prod(u[0::2]))


def _observables_stack(u: np.ndarray, log_product: bool = False) -> np.ndarray:
    n = u.shape[-1]
    lax = _lax_stack(u)
    l2 = lax @ lax
    power = l2
    cols = []
    for _ in range(n // 2):
        cols.append(np.trace(power, axis1=-2, axis2=-1))
        power = power @ l2
    cols.append(np.log(u).sum(axis=-1) if log_product else np.prod(u, axis=-1))
    return np.stack(cols, axis=-1)


def observable_vector(state: State | ArrayLike, *, log_product: bool = False) -> np.ndarray:
    """``[tr L^2, tr L^4, ..., tr L^N, prod U_k]`` (length N/2 + 1).

    With ``log_product`` the last entry is ``sum log U_k`` instead.
    """
    return _observables_stack(as_state(state).u, log_product)


def observables_along(states: ArrayLike, *, log_product: bool = False) -> np.ndarray:
    """Observable vectors for an (S, N) array of states, returned as (S, N/2 + 1)."""
    u = np.asarray(states, dtype=float)
    if u.ndim != 2:
        raise InvalidInput(f"expected an (S, N) array of states, got shape {u.shape}")
    return _observables_stack(u, log_product)


def _gradients_stack(u: np.ndarray, log_product: bool = False) -> np.ndarray:
    """Gradients for a stack of states, shape (..., N) -> (..., N/2 + 1, N).

    d tr(L^p) / dU_k = p (L^{p-1})[k, k+1] / A_k, since A_k sits in two
    symmetric slots and dA_k/dU_k = 1 / (2 A_k).
    """
    n = u.shape[-1]
    k = np.arange(n)
    kp = (k + 1) % n
    a = np.sqrt(u)
    lax = _lax_stack(u)
    l2 = lax @ lax
    odd_power = lax
    rows = []
    for m in range(1, n // 2 + 1):
        p = 2 * m
        rows.append(p * odd_power[..., k, kp] / a)
        odd_power = odd_power @ l2
    if log_product:
        rows.append(1.0 / u)
    else:
        rows.append(np.prod(u, axis=-1)[..., None] / u)
    return np.stack(rows, axis=-2)


def _check_index(j: int, n: int) -> None:
    if not isinstance(j, (int, np.integer)) or not 1 <= j <= n_observables(n):
        raise InvalidInput(f"observable index must be in 1..{n_observables(n)}, got {j!r}")


def gradient_matrix(state: State | ArrayLike, *, log_product: bool = False) -> np.ndarray:
    """All observable gradients as an (N/2 + 1, N) matrix."""
    return _gradients_stack(as_state(state).u, log_product)


def observable_gradient(state: State | ArrayLike, j: int, *, log_product: bool = False) -> np.ndarray:
    u = as_state(state).u
    _check_index(j, u.size)
    return _gradients_stack(u, log_product)[j - 1]


def _stencil_stack(u: np.ndarray) -> np.ndarray:
    return np.roll(u, -1, axis=-1) - 2.0 * u + np.roll(u, 1, axis=-1)


def drift_integrands(states: ArrayLike, *, log_product: bool = False) -> np.ndarray:
    """``grad v_j . D`` for every observable and every state in an (S, N) stack."""
    u = np.asarray(states, dtype=float)
    grads = _gradients_stack(u, log_product)
    return np.einsum("...jk,...k->...j", grads, _stencil_stack(u))


def drift_integrand(state: State | ArrayLike, j: int, *, log_product: bool = False) -> float:
    """Bare (nu-free) slow drift of ``v_j``: ``grad v_j(U) . D(U)``."""
    u = as_state(state).u
    _check_index(j, u.size)
    if j == 1:
        # constant gradient against a telescoping stencil
        return 0.0
    return float(observable_gradient(u, j, log_product=log_product) @ diffusion_stencil(u))


def closed_form_trace6(state: State | ArrayLike) -> float:
    """Commonly quoted N = 6 closed form for ``tr L^6``; does not equal the trace."""
    u = as_state(state).u
    if u.size != 6:
        raise InvalidInput("the degree-6 closed form is for N = 6 only")
    up, um = np.roll(u, -1), np.roll(u, 1)
    total = np.sum(u * (um + u + up) ** 2 + um * u * up)
    return float(total + 12.0 * np.prod(np.sqrt(u)))


def closed_form_trace4(state: State | ArrayLike) -> float:
    """Closed form ``sum(2 U_k U_{k+1} + (U_k + U_{k-1})^2)``; agrees with ``tr L^4``."""
    u = as_state(state).u
    up, um = np.roll(u, -1), np.roll(u, 1)
    return float(np.sum(2.0 * u * up + (u + um) ** 2))
