"""Reusable robust-constraint builders (Schur, S-procedure, sign-definiteness)."""

import numpy as np

from .expr import Affine, bmat, lift


def _as_col(r):
    r = lift(r)
    return r.reshape(r.size, 1)


def _scalar_block(s):
    return lift(s).reshape(1, 1)


def schur_lift(t, r):
    """[[t, r^H], [r, I]]; PSD iff t >= ||r||^2."""
    r = _as_col(r)
    m = r.shape[0]
    return bmat([[_scalar_block(t), r.H], [r, np.eye(m)]])


def _split_sizes(n, sizes):
    if sizes is None:
        return [n]
    if sum(sizes) != n:
        raise ValueError("block sizes do not add up to the LMI order")
    return list(sizes)


def s_procedure_lmi(prog, E0, e0, g0, radius, sizes=None, name="rho"):
    """S-procedure block for x^H E0 x + 2Re{e0^H x} + g0 >= 0 on norm balls.

    With one radius the uncertainty is ||x|| <= radius and the condition is
    exact.  With several radii ``x`` is split according to ``sizes`` and each
    piece gets its own ball and multiplier (sufficient only).

    Returns (block, multipliers).
    """
    E0 = lift(E0)
    n = E0.shape[0]
    radii = np.atleast_1d(np.asarray(radius, dtype=float))
    sizes = _split_sizes(n, sizes if len(radii) > 1 else None)
    if len(sizes) != len(radii):
        raise ValueError("one radius per block expected")
    rhos = []
    diag = None
    corner = lift(g0).reshape(())
    for i, (m, xi) in enumerate(zip(sizes, radii)):
        rho = prog.var(f"{name}{i}" if len(radii) > 1 else name, (), nonneg=True)
        rhos.append(rho)
        d = np.zeros(n)
        off = sum(sizes[:i])
        d[off:off + m] = 1.0
        term = rho.expr() * np.diag(d)
        diag = term if diag is None else diag + term
        corner = corner - rho.expr() * (xi ** 2)
    top = E0 + diag
    col = _as_col(e0)
    block = bmat([[top, col], [col.H, corner.reshape(1, 1)]])
    return block, rhos


def sign_definiteness_lmi(prog, E, Ys, Z_grams, zetas, name="tau"):
    """Certificate for E >= sum_i (Y_i^H X_i Z_i + Z_i^H X_i^H Y_i), ||X_i||_F <= zeta_i.

    ``Ys`` are affine (or constant) p_i x n factors, ``Z_grams`` the constant
    Gram matrices Z_i^H Z_i (n x n).  Perturbations with zero radius are
    dropped.  Returns (block, multipliers).
    """
    E = lift(E)
    if not (1 <= len(Ys) <= 2) or len(Ys) != len(Z_grams) or len(Ys) != len(zetas):
        raise ValueError("sign-definiteness builder supports P in {1, 2}")
    active = [i for i, z in enumerate(zetas) if z > 0]
    if not active:
        return E, []
    taus = []
    top = E
    rows = []
    for j, i in enumerate(active):
        tau = prog.var(f"{name}{i}" if len(Ys) > 1 else name, (), nonneg=True)
        taus.append(tau)
        top = top - tau.expr() * np.asarray(Z_grams[i], dtype=complex)
    blocks = [[top] + [None] * len(active)]
    for j, i in enumerate(active):
        Y = lift(Ys[i])
        p = Y.shape[0]
        row = [Y * (-zetas[i])] + [None] * len(active)
        row[1 + j] = taus[j].expr() * np.eye(p)
        blocks[0][1 + j] = Y.H * (-zetas[i])
        rows.append(row)
    blocks += rows
    # fill sizes of empty off-diagonal blocks
    sizes = [E.shape[0]] + [lift(Ys[i]).shape[0] for i in active]
    for a in range(len(blocks)):
        for b in range(len(blocks)):
            if blocks[a][b] is None:
                blocks[a][b] = np.zeros((sizes[a], sizes[b]))
    return bmat(blocks), taus
