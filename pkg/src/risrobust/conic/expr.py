"""Complex affine expressions over real decision variables.

An expression is ``const + sum_v coef_v @ x_v`` where every ``x_v`` is a
real vector.  Coefficients are stored as complex arrays of shape
``(*shape, v.size)`` so complex data can be carried around until the
program is lowered to real cone blocks.
"""

import numpy as np


class Variable:
    """Real decision variable owned by a program."""

    def __init__(self, name, shape, index):
        self.name = name
        self.shape = tuple(shape)
        self.size = int(np.prod(self.shape)) if self.shape else 1
        self.index = index
        self.offset = None

    def __repr__(self):
        return f"Variable({self.name!r}, {self.shape})"

    def __hash__(self):
        return id(self)

    def __eq__(self, other):
        return self is other

    def expr(self):
        coef = np.eye(self.size, dtype=complex).reshape(self.shape + (self.size,))
        return Affine(self.shape, np.zeros(self.shape, dtype=complex), {self: coef})


def _delegate(name):
    def op(self, *args):
        return getattr(self.expr(), name)(*args)
    op.__name__ = name
    return op


for _name in ("__add__", "__radd__", "__sub__", "__rsub__", "__mul__", "__rmul__",
              "__truediv__", "__neg__", "__matmul__", "__rmatmul__", "__getitem__",
              "conj", "sum", "reshape", "flatten", "trace"):
    setattr(Variable, _name, _delegate(_name))
Variable.__array_ufunc__ = None
Variable.T = property(lambda self: self.expr().T)
Variable.H = property(lambda self: self.expr().H)


def _const(x):
    return np.asarray(x, dtype=complex)


class Affine:
    """Affine expression with complex coefficients."""

    __array_ufunc__ = None

    def __init__(self, shape, const, terms):
        self.shape = tuple(shape)
        self.const = const
        self.terms = terms

    # construction
    @staticmethod
    def lift(x):
        if isinstance(x, Affine):
            return x
        if isinstance(x, Variable):
            return x.expr()
        c = _const(x)
        return Affine(c.shape, c, {})

    @property
    def ndim(self):
        return len(self.shape)

    @property
    def size(self):
        return int(np.prod(self.shape)) if self.shape else 1

    def is_constant(self):
        return not self.terms

    def variables(self):
        return list(self.terms)

    def _map(self, f_const, f_coef, shape=None):
        const = f_const(self.const)
        terms = {v: f_coef(c) for v, c in self.terms.items()}
        return Affine(const.shape if shape is None else shape, const, terms)

    # arithmetic
    def __neg__(self):
        return self._map(lambda c: -c, lambda c: -c)

    def __add__(self, other):
        other = Affine.lift(other)
        shape = np.broadcast_shapes(self.shape, other.shape)
        const = np.broadcast_to(self.const, shape) + np.broadcast_to(other.const, shape)
        terms = {}
        for src in (self, other):
            for v, c in src.terms.items():
                c = np.broadcast_to(c, shape + (v.size,))
                terms[v] = terms[v] + c if v in terms else np.array(c)
        return Affine(shape, const, terms)

    __radd__ = __add__

    def __sub__(self, other):
        return self + (-Affine.lift(other))

    def __rsub__(self, other):
        return Affine.lift(other) + (-self)

    def __mul__(self, other):
        if isinstance(other, (Affine, Variable)):
            raise TypeError("product of two affine expressions is not affine")
        c = _const(other)
        shape = np.broadcast_shapes(self.shape, c.shape)
        return Affine(shape, self.const * c,
                      {v: coef * c[..., None] for v, coef in self.terms.items()})

    __rmul__ = __mul__

    def __truediv__(self, other):
        return self * (1.0 / _const(other))

    def __matmul__(self, other):
        if isinstance(other, (Affine, Variable)):
            raise TypeError("product of two affine expressions is not affine")
        C = _const(other)
        const = self.const @ C
        terms = {}
        for v, coef in self.terms.items():
            cf = np.moveaxis(coef, -1, 0) @ C
            terms[v] = np.moveaxis(cf, 0, -1)
        return Affine(const.shape, const, terms)

    def __rmatmul__(self, other):
        C = _const(other)
        const = C @ self.const
        terms = {v: np.tensordot(C, coef, axes=([-1], [0]))
                 for v, coef in self.terms.items()}
        return Affine(const.shape, const, terms)

    # structure
    def conj(self):
        return self._map(np.conj, np.conj)

    @property
    def real(self):
        return self._map(lambda c: c.real.astype(complex), lambda c: c.real.astype(complex))

    @property
    def imag(self):
        return self._map(lambda c: c.imag.astype(complex), lambda c: c.imag.astype(complex))

    @property
    def T(self):
        if self.ndim < 2:
            return self
        return self._map(lambda c: c.T, lambda c: np.swapaxes(c, 0, 1))

    @property
    def H(self):
        return self.T.conj()

    def __getitem__(self, idx):
        if not isinstance(idx, tuple):
            idx = (idx,)
        const = self.const[idx]
        return Affine(const.shape, const, {v: c[idx] for v, c in self.terms.items()})

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        const = self.const.reshape(shape)
        return Affine(const.shape, const,
                      {v: c.reshape(const.shape + (v.size,)) for v, c in self.terms.items()})

    def flatten(self):
        return self.reshape(-1)

    def sum(self):
        ax = tuple(range(self.ndim))
        return Affine((), self.const.sum(),
                      {v: c.sum(axis=ax) for v, c in self.terms.items()})

    def trace(self):
        n = self.shape[0]
        return Affine((), np.trace(self.const),
                      {v: c[np.arange(n), np.arange(n)].sum(axis=0) for v, c in self.terms.items()})

    def diag(self):
        n = self.shape[0]
        idx = np.arange(n)
        return Affine((n,), self.const[idx, idx], {v: c[idx, idx] for v, c in self.terms.items()})

    # evaluation
    def value(self, x):
        """Evaluate given a mapping variable -> real array (or name -> array)."""
        out = np.array(self.const, dtype=complex)
        for v, c in self.terms.items():
            xv = x[v] if v in x else x[v.name]
            out = out + c @ np.asarray(xv, dtype=float).reshape(-1)
        return out

    def imag_free(self, tol=0.0):
        if np.any(np.abs(self.const.imag) > tol):
            return False
        return all(not np.any(np.abs(c.imag) > tol) for c in self.terms.values())

    def __repr__(self):
        return f"Affine(shape={self.shape}, vars={[v.name for v in self.terms]})"


def lift(x):
    return Affine.lift(x)


def concat(parts, axis=0):
    parts = [lift(p) for p in parts]
    const = np.concatenate([p.const for p in parts], axis=axis)
    allvars = []
    for p in parts:
        for v in p.terms:
            if v not in allvars:
                allvars.append(v)
    terms = {}
    for v in allvars:
        blocks = []
        for p in parts:
            if v in p.terms:
                blocks.append(p.terms[v])
            else:
                blocks.append(np.zeros(p.shape + (v.size,), dtype=complex))
        terms[v] = np.concatenate(blocks, axis=axis)
    return Affine(const.shape, const, terms)


def bmat(blocks):
    """Assemble a block matrix from a nested list; ``None`` is a zero block."""
    nr, nc = len(blocks), len(blocks[0])
    rows = [None] * nr
    cols = [None] * nc
    for i in range(nr):
        for j in range(nc):
            b = blocks[i][j]
            if b is None:
                continue
            b = lift(b)
            if b.ndim != 2:
                raise ValueError("bmat blocks must be 2-D")
            rows[i] = b.shape[0] if rows[i] is None else rows[i]
            cols[j] = b.shape[1] if cols[j] is None else cols[j]
            if rows[i] != b.shape[0] or cols[j] != b.shape[1]:
                raise ValueError("inconsistent block sizes")
    if None in rows or None in cols:
        raise ValueError("every block row and column needs one sized block")
    out_rows = []
    for i in range(nr):
        row = []
        for j in range(nc):
            b = blocks[i][j]
            row.append(lift(np.zeros((rows[i], cols[j]))) if b is None else lift(b))
        out_rows.append(concat(row, axis=1))
    return concat(out_rows, axis=0)


def vec(X):
    """Column-major stacking."""
    if isinstance(X, (Affine, Variable)):
        return lift(X).T.flatten()
    return np.asarray(X).reshape(-1, order="F")


def kron(A, B):
    """Kronecker product; at most one factor may be affine."""
    if isinstance(A, Variable):
        A = A.expr()
    if isinstance(B, Variable):
        B = B.expr()
    a_aff, b_aff = isinstance(A, Affine), isinstance(B, Affine)
    if not (a_aff or b_aff):
        return np.kron(A, B)
    if a_aff and b_aff:
        raise TypeError("kron of two affine expressions is not affine")
    if a_aff:
        C = _const(B)
        E = A
        if E.ndim == 1 and C.ndim == 1:
            const = np.kron(E.const, C)
            terms = {v: (c[:, None, :] * C[None, :, None]).reshape(-1, v.size)
                     for v, c in E.terms.items()}
        else:
            En, Cn = E.ndim, C.ndim
            if En != 2 or Cn != 2:
                raise ValueError("kron supports vector-vector or matrix-matrix")
            p, q = E.shape
            r, s = C.shape
            const = np.kron(E.const, C)
            terms = {v: (c[:, None, :, None, :] * C[None, :, None, :, None]).reshape(p * r, q * s, v.size)
                     for v, c in E.terms.items()}
        return Affine(const.shape, const, terms)
    C = _const(A)
    E = B
    if E.ndim == 1 and C.ndim == 1:
        const = np.kron(C, E.const)
        terms = {v: (C[:, None, None] * c[None, :, :]).reshape(-1, v.size)
                 for v, c in E.terms.items()}
    else:
        if E.ndim != 2 or C.ndim != 2:
            raise ValueError("kron supports vector-vector or matrix-matrix")
        p, q = C.shape
        r, s = E.shape
        const = np.kron(C, E.const)
        terms = {v: (C[:, None, :, None, None] * c[None, :, None, :, :]).reshape(p * r, q * s, v.size)
                 for v, c in E.terms.items()}
    return Affine(const.shape, const, terms)


def outer(a, b):
    """``a b^H`` for vectors, at most one of them affine."""
    a_aff, b_aff = isinstance(a, (Affine, Variable)), isinstance(b, (Affine, Variable))
    if not (a_aff or b_aff):
        return np.outer(a, np.conj(b))
    if a_aff and b_aff:
        raise TypeError("outer product of two affine expressions is not affine")
    if a_aff:
        a = lift(a)
        bc = np.conj(_const(b))
        const = np.outer(a.const, bc)
        terms = {v: c[:, None, :] * bc[None, :, None] for v, c in a.terms.items()}
    else:
        b = lift(b).conj()
        ac = _const(a)
        const = np.outer(ac, b.const)
        terms = {v: ac[:, None, None] * c[None, :, :] for v, c in b.terms.items()}
    return Affine(const.shape, const, terms)


def hermitian_part(H):
    H = lift(H)
    return (H + H.H) * 0.5
