"""Conic program container, lowering to real cones, and solver backends."""

from dataclasses import dataclass, field
import time

import numpy as np
import scipy.sparse as sp

from .expr import Affine, Variable, bmat, concat, lift, vec

STATUSES = ("optimal", "infeasible", "unbounded", "numerical_failure")


@dataclass
class Tolerances:
    feas: float = 1e-7
    gap: float = 1e-8
    max_iter: int = 200

    def tighter(self, factor=10.0):
        return Tolerances(self.feas / factor, self.gap / factor, self.max_iter)


@dataclass
class SolveReport:
    status: str
    objective: float
    values: dict
    iterations: int
    max_violation: float
    solve_time: float = 0.0
    backend: str = ""
    raw_status: str = ""

    @property
    def ok(self):
        return self.status == "optimal"

    def value(self, expr):
        """Evaluate an expression at the returned point."""
        if isinstance(expr, Variable):
            return self.values[expr.name].reshape(expr.shape) if expr.shape else float(self.values[expr.name][0])
        return lift(expr).value(self.values)


@dataclass
class Block:
    kind: str          # "zero", "nonneg", "soc", "psd"
    G: np.ndarray      # rows x nvar (real), block value = G x + h
    h: np.ndarray
    dim: int           # cone dimension (psd: matrix order)
    tag: str = ""


def _rows(expr, offsets, nvar):
    """Real coefficient rows of a real-valued flattened expression."""
    e = expr.flatten()
    m = e.size
    G = np.zeros((m, nvar))
    for v, c in e.terms.items():
        G[:, offsets[v]:offsets[v] + v.size] += c.real
    return G, e.const.real.copy()


def hermitian_embed(H):
    """Real symmetric embedding [[Re H, -Im H], [Im H, Re H]]."""
    if isinstance(H, np.ndarray):
        H = np.asarray(H, dtype=complex)
        if not np.allclose(H, H.conj().T, atol=1e-10 * max(1.0, np.abs(H).max(initial=0.0))):
            raise ValueError("hermitian_embed needs a Hermitian matrix")
        return np.block([[H.real, -H.imag], [H.imag, H.real]])
    H = lift(H)
    _check_hermitian(H)
    return bmat([[H.real, -H.imag], [H.imag, H.real]])


def _check_hermitian(H, tol=1e-9):
    if H.ndim != 2 or H.shape[0] != H.shape[1]:
        raise ValueError("PSD block must be square")
    D = H - H.H
    scale = max(1.0, float(np.abs(H.const).max(initial=0.0)))
    bad = np.abs(D.const).max(initial=0.0) > tol * scale
    for c in D.terms.values():
        bad = bad or np.abs(c).max(initial=0.0) > tol * max(1.0, scale)
    if bad:
        raise ValueError("matrix expression is not Hermitian")


class ConicProgram:
    """Linear objective with zero, nonnegative, second-order and PSD blocks."""

    def __init__(self, name="program"):
        self.name = name
        self._vars = []
        self._names = set()
        self._cons = []       # (kind, expr, tag)
        self._objective = Affine((), np.zeros((), dtype=complex), {})
        self._sense = "min"

    # variables
    def var(self, name, shape=(), nonneg=False):
        if name in self._names:
            raise ValueError(f"duplicate variable name {name!r}")
        shape = (shape,) if isinstance(shape, int) else tuple(shape)
        v = Variable(name, shape, len(self._vars))
        self._vars.append(v)
        self._names.add(name)
        if nonneg:
            self.add_nonneg(v.expr(), tag=f"{name}>=0")
        return v

    def complex_var(self, name, shape):
        re = self.var(name + ".re", shape)
        im = self.var(name + ".im", shape)
        return re.expr() + im.expr() * 1j

    def hermitian_var(self, name, n, diag=None):
        """Hermitian n x n expression; a fixed diagonal may be supplied."""
        iu = np.triu_indices(n, 1)
        noff = len(iu[0])
        const = np.zeros((n, n), dtype=complex)
        terms = {}
        if diag is None:
            d = self.var(name + ".diag", n)
            cd = np.zeros((n, n, n), dtype=complex)
            cd[np.arange(n), np.arange(n), np.arange(n)] = 1.0
            terms[d] = cd
        else:
            const[np.arange(n), np.arange(n)] = np.asarray(diag, dtype=float)
        if noff:
            re = self.var(name + ".re", noff)
            im = self.var(name + ".im", noff)
            cr = np.zeros((n, n, noff), dtype=complex)
            ci = np.zeros((n, n, noff), dtype=complex)
            k = np.arange(noff)
            cr[iu[0], iu[1], k] = 1.0
            cr[iu[1], iu[0], k] = 1.0
            ci[iu[0], iu[1], k] = 1j
            ci[iu[1], iu[0], k] = -1j
            terms[re] = cr
            terms[im] = ci
        return Affine((n, n), const, terms)

    @property
    def variables(self):
        return list(self._vars)

    # constraints
    def add_eq(self, expr, tag=""):
        expr = lift(expr)
        self._require_real(expr, tag)
        self._cons.append(("zero", expr, tag))

    def add_nonneg(self, expr, tag=""):
        """expr >= 0 elementwise (real expression)."""
        expr = lift(expr)
        self._require_real(expr, tag)
        self._cons.append(("nonneg", expr, tag))

    def add_ge(self, lhs, rhs, tag=""):
        self.add_nonneg(lift(lhs) - rhs, tag)

    def add_soc(self, t, x, tag=""):
        """||x||_2 <= t, x may be complex."""
        t = lift(t)
        x = lift(x).flatten()
        self._require_real(t, tag)
        parts = x.real if x.imag_free() else concat([x.real, x.imag])
        self._cons.append(("soc", concat([t.reshape(1), parts]), tag))

    def add_rotated_soc(self, x, t, s=1.0, tag=""):
        """||x||^2 <= t*s with t, s >= 0."""
        t = lift(t).reshape(())
        s = lift(s).reshape(())
        x = lift(x).flatten()
        xs = x.real if x.imag_free() else concat([x.real, x.imag])
        self.add_soc(t + s, concat([(t - s).reshape(1), xs * 2.0]), tag)

    def add_psd(self, H, tag=""):
        """Hermitian (or real symmetric) affine matrix is PSD."""
        H = lift(H)
        _check_hermitian(H)
        if H.imag_free():
            S = H.real
        else:
            S = hermitian_embed(H)
        S = (S + S.T) * 0.5
        self._cons.append(("psd", S, tag))

    def _require_real(self, expr, tag):
        scale = max(1.0, float(np.abs(expr.const).max(initial=0.0)))
        if not expr.imag_free(1e-12 * scale):
            raise ValueError(f"constraint {tag!r} has imaginary part")

    # objective
    def minimize(self, expr):
        expr = lift(expr)
        self._require_real(expr, "objective")
        self._objective = expr.reshape(())
        self._sense = "min"

    def maximize(self, expr):
        self.minimize(-lift(expr))
        self._sense = "max"

    # lowering
    def compile(self):
        offsets = {}
        n = 0
        for v in self._vars:
            offsets[v] = n
            v.offset = n
            n += v.size
        blocks = []
        for kind, expr, tag in self._cons:
            if kind == "psd":
                G, h = _rows(expr, offsets, n)
                blocks.append(Block("psd", G, h, expr.shape[0], tag))
            else:
                G, h = _rows(expr, offsets, n)
                blocks.append(Block(kind, G, h, G.shape[0], tag))
        c, _ = _rows(self._objective.reshape(1), offsets, n)
        c0 = float(self._objective.const.real)
        return Compiled(self, n, c.ravel(), c0, blocks, offsets)

    def solve(self, tol=None, backend=None, fallback=True):
        return solve(self, tol, backend, fallback)

    def dump(self, path_or_file):
        self.compile().dump(path_or_file)


def svec_index(n):
    """(row, col) pairs of the upper triangle, column-major."""
    rows, cols = [], []
    for j in range(n):
        for i in range(j + 1):
            rows.append(i)
            cols.append(j)
    return np.array(rows), np.array(cols)


class Compiled:
    def __init__(self, prog, nvar, c, c0, blocks, offsets):
        self.prog = prog
        self.nvar = nvar
        self.c = c
        self.c0 = c0
        self.blocks = blocks
        self.offsets = offsets

    def unpack(self, x):
        return {v.name: np.asarray(x[self.offsets[v]:self.offsets[v] + v.size], dtype=float)
                for v in self.prog.variables}

    def block_value(self, b, x):
        val = b.G @ x + b.h
        if b.kind == "psd":
            val = val.reshape(b.dim, b.dim)
        return val

    def violations(self, x):
        """Per-block violation scaled by the block magnitude."""
        out = []
        for b in self.blocks:
            val = self.block_value(b, x)
            scale = max(1.0, float(np.abs(b.h).max(initial=0.0)))
            if b.kind == "zero":
                viol = float(np.abs(val).max(initial=0.0))
            elif b.kind == "nonneg":
                viol = float(max(0.0, -val.min(initial=0.0)))
            elif b.kind == "soc":
                viol = float(max(0.0, np.linalg.norm(val[1:]) - val[0]))
            else:
                S = 0.5 * (val + val.T)
                viol = float(max(0.0, -np.linalg.eigvalsh(S)[0]))
            out.append(viol / scale)
        return out

    # backends
    def to_clarabel(self):
        import clarabel
        A_parts, b_parts, cones = [], [], []
        for blk in self.blocks:
            if blk.kind == "psd":
                n = blk.dim
                r, cidx = svec_index(n)
                scale = np.where(r == cidx, 1.0, np.sqrt(2.0))
                flat = r * n + cidx
                G = blk.G[flat] * scale[:, None]
                h = blk.h[flat] * scale
                cones.append(clarabel.PSDTriangleConeT(n))
            else:
                G, h = blk.G, blk.h
                if blk.kind == "zero":
                    cones.append(clarabel.ZeroConeT(G.shape[0]))
                elif blk.kind == "nonneg":
                    cones.append(clarabel.NonnegativeConeT(G.shape[0]))
                else:
                    cones.append(clarabel.SecondOrderConeT(G.shape[0]))
            A_parts.append(-G)
            b_parts.append(h)
        A = sp.csc_matrix(np.vstack(A_parts)) if A_parts else sp.csc_matrix((0, self.nvar))
        b = np.concatenate(b_parts) if b_parts else np.zeros(0)
        return A, b, cones

    def dump(self, path_or_file):
        """Sparse-triplet text dump in the backend's standard form.

        Layout::

            # conic program <name>
            nvar <n>
            objective_offset <c0>
            objective <i> <c_i>          (nonzeros only)
            cone <kind> <dim>            (declaration order)
            A <row> <col> <value>        (standard form A x + s = b, s in K)
            b <row> <value>
        """
        A, b, _ = self.to_clarabel()
        lines = [f"# conic program {self.prog.name}", f"nvar {self.nvar}",
                 f"objective_offset {self.c0!r}"]
        for i in np.flatnonzero(self.c):
            lines.append(f"objective {i} {self.c[i]!r}")
        for blk in self.blocks:
            dim = blk.dim if blk.kind == "psd" else blk.G.shape[0]
            lines.append(f"cone {blk.kind} {dim}")
        A = A.tocoo()
        for r, c, v in zip(A.row, A.col, A.data):
            lines.append(f"A {r} {c} {v!r}")
        for i in np.flatnonzero(b):
            lines.append(f"b {i} {b[i]!r}")
        text = "\n".join(lines) + "\n"
        if hasattr(path_or_file, "write"):
            path_or_file.write(text)
        else:
            with open(path_or_file, "w") as fh:
                fh.write(text)


def _solve_clarabel(cp, tol, equilibrate=True):
    import clarabel
    A, b, cones = cp.to_clarabel()
    P = sp.csc_matrix((cp.nvar, cp.nvar))
    st = clarabel.DefaultSettings()
    st.verbose = False
    st.tol_feas = tol.feas
    st.tol_gap_abs = tol.gap
    st.tol_gap_rel = tol.gap
    st.max_iter = tol.max_iter
    st.chordal_decomposition_enable = False
    st.equilibrate_enable = equilibrate
    try:
        solver = clarabel.DefaultSolver(P, cp.c, A, b, cones, st)
        sol = solver.solve()
    except (Exception, BaseException) as exc:  # noqa: BLE001 - rust panics are BaseException
        if isinstance(exc, KeyboardInterrupt):
            raise
        return "numerical_failure", None, 0, repr(exc)
    raw = str(sol.status)
    x = np.array(sol.x, dtype=float)
    if raw == "Solved":
        status = "optimal"
    elif raw == "AlmostSolved":
        status = "almost"
    elif raw in ("PrimalInfeasible", "AlmostPrimalInfeasible"):
        status = "infeasible"
    elif raw in ("DualInfeasible", "AlmostDualInfeasible"):
        status = "unbounded"
    else:
        status = "numerical_failure"
    return status, x, int(sol.iterations), raw


def _solve_cvxopt(cp, tol):
    import cvxopt
    from cvxopt import solvers
    G_l, h_l, G_q, h_q, G_s, h_s, A_e, b_e = [], [], [], [], [], [], [], []
    for blk in cp.blocks:
        if blk.kind == "zero":
            A_e.append(blk.G)
            b_e.append(-blk.h)
        elif blk.kind == "nonneg":
            G_l.append(-blk.G)
            h_l.append(blk.h)
        elif blk.kind == "soc":
            G_q.append(-blk.G)
            h_q.append(blk.h)
        else:
            n = blk.dim
            # cvxopt wants column-major vec; our rows are row-major of a symmetric matrix
            perm = np.arange(n * n).reshape(n, n).T.ravel()
            G_s.append(-blk.G[perm])
            h_s.append(blk.h[perm])
    dims = {"l": int(sum(g.shape[0] for g in G_l)),
            "q": [g.shape[0] for g in G_q],
            "s": [int(round(np.sqrt(g.shape[0]))) for g in G_s]}
    G = np.vstack(G_l + G_q + G_s) if (G_l or G_q or G_s) else np.zeros((0, cp.nvar))
    h = np.concatenate(h_l + h_q + h_s) if (h_l or h_q or h_s) else np.zeros(0)
    opts = {"show_progress": False, "abstol": tol.gap, "reltol": tol.gap,
            "feastol": tol.feas, "maxiters": tol.max_iter}
    args = [cvxopt.matrix(cp.c), cvxopt.matrix(G), cvxopt.matrix(h), dims]
    if A_e:
        args += [cvxopt.matrix(np.vstack(A_e)), cvxopt.matrix(np.concatenate(b_e))]
    try:
        res = solvers.conelp(*args, options=opts)
    except Exception as exc:  # noqa: BLE001
        return "numerical_failure", None, 0, repr(exc)
    raw = res["status"]
    x = np.array(res["x"]).ravel() if res["x"] is not None else None
    status = {"optimal": "optimal", "primal infeasible": "infeasible",
              "dual infeasible": "unbounded"}.get(raw, "almost" if x is not None else "numerical_failure")
    return status, x, int(res.get("iterations", 0)), raw


def _solve_clarabel_plain(cp, tol):
    return _solve_clarabel(cp, tol, equilibrate=False)


BACKENDS = {"clarabel": _solve_clarabel, "clarabel-noeq": _solve_clarabel_plain,
            "cvxopt": _solve_cvxopt}
# tried in order when the requested backend stalls short of the tolerances
FALLBACKS = {"cvxopt": ["clarabel", "clarabel-noeq"],
             "clarabel": ["clarabel-noeq", "cvxopt"]}
# cvxopt's dual scaling keeps the KKT system at nvar x nvar, which suits
# programs with few variables and large LMI blocks (every subproblem here)
DEFAULT_BACKEND = "cvxopt"


def solve(program, tol=None, backend=None, fallback=True):
    """Solve a ConicProgram; never raises on solver trouble.

    If the backend ends in a numerical failure the fallback backends are
    tried in turn; the report names the backend that produced it.
    """
    tol = tol or Tolerances()
    backend = backend or DEFAULT_BACKEND
    cp = program.compile()
    if backend not in BACKENDS:
        raise ValueError(f"unknown backend {backend!r}")
    chain = [backend] + (FALLBACKS.get(backend, []) if fallback else [])
    rep = None
    for be in chain:
        rep = _solve_compiled(program, cp, tol, be)
        if rep.status != "numerical_failure":
            break
    return rep


def _solve_compiled(program, cp, tol, backend):
    t0 = time.perf_counter()
    if cp.nvar == 0:
        x = np.zeros(0)
        viols = cp.violations(x)
        ok = (max(viols) if viols else 0.0) <= tol.feas
        status, iters, raw = ("optimal" if ok else "infeasible"), 0, "constant"
    else:
        status, x, iters, raw = BACKENDS[backend](cp, tol)
    values, obj, viol = {}, float("nan"), float("inf")
    if x is not None and np.all(np.isfinite(x)) and status in ("optimal", "almost"):
        viols = cp.violations(x)
        viol = max(viols) if viols else 0.0
        values = cp.unpack(x)
        obj = float(cp.c @ x + cp.c0)
        if program._sense == "max":
            obj = -obj
        if status == "almost":
            status = "optimal" if viol <= 10 * tol.feas else "numerical_failure"
    elif status in ("optimal", "almost"):
        status = "numerical_failure"
    return SolveReport(status, obj, values, iters, viol,
                       time.perf_counter() - t0, backend, raw)


__all__ = ["ConicProgram", "SolveReport", "Tolerances", "solve", "hermitian_embed",
           "vec", "lift", "STATUSES"]
