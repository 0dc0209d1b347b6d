"""Outage-constrained power minimization under Gaussian cascaded CSI errors.

With isotropic errors the effective channel error e = dh + dH^H theta is
CN(0, c I) with c = delta2_H N (+ delta2_D when the direct link is also
uncertain).  The rate constraint becomes a Gaussian quadratic chance
constraint handled by the Bernstein-type safe approximation.  The precoder
step is an SDR over Psi_k = w_k w_k^H followed by rank-one recovery; the
reflection step is an SDR over the lifted reflection matrix followed by
Gaussian randomization.
"""

from dataclasses import dataclass
import math

import numpy as np

from .conic import Affine, ConicProgram, InfeasibleSubproblem, Tolerances, concat, lift
from .robust_bounded import (PCU, FCU, BeamformingSolution, BoundedDesignParams, normalize,
                             project_unit, random_theta)


@dataclass
class StatisticalDesignParams:
    ao_tol: float = 1e-3
    ao_max_iter: int = 30
    randomizations: int = 100
    rank_threshold: float = 0.9999
    tol: Tolerances = None
    objective: str = "sum"
    selection: str = "min"

    def __post_init__(self):
        if self.tol is None:
            self.tol = Tolerances()
        if self.randomizations < 1:
            raise ValueError("at least one randomization candidate is needed")


class DegenerateRecovery(ValueError):
    pass


def _gamma(R_th):
    if R_th <= 0:
        raise ValueError("rate threshold must be positive")
    return 2.0 ** R_th - 1.0


def error_scale(model, k, scenario=PCU):
    """Variance c of the effective channel error seen by user k."""
    c = model.delta2_H[k] * model.N
    if scenario == FCU:
        c += model.delta2_D[k]
    return float(c)


def xi_matrix(precoders, k, R_th):
    """Xi_k = P_k / (2^R - 1) - sum_{i != k} P_i.

    ``precoders`` is either an M x K matrix W (numeric) or a list of
    M x M matrices Psi_i (numeric or affine).
    """
    gam = _gamma(R_th)
    if isinstance(precoders, np.ndarray) and precoders.ndim == 2:
        W = precoders
        wk = W[:, k:k + 1]
        Wm = np.delete(W, k, axis=1)
        X = wk @ wk.conj().T / gam - Wm @ Wm.conj().T
        return 0.5 * (X + X.conj().T)
    Ps = list(precoders)
    X = Ps[k] * (1.0 / gam)
    for i, P in enumerate(Ps):
        if i != k:
            X = X - P
    if isinstance(X, Affine):
        return X
    X = np.asarray(X)
    return 0.5 * (X + X.conj().T)


@dataclass
class BtiTerms:
    trace_term: object     # Tr{Q}
    frob_term: object      # ||Q||_F (as a vector whose norm it is)
    qvec: object           # q, with ||q||^2 = qvec_norm2
    q_scalar: object       # quadratic-form constant
    c: float
    Xi: object

    @property
    def qvec_norm2(self):
        return float(np.linalg.norm(_val(self.qvec)) ** 2)


def _val(a):
    if isinstance(a, Affine):
        return a.const if a.is_constant() else None
    return np.asarray(a)


def bti_terms(Xi, a, c, sigma2=1.0):
    """Deterministic BTI pieces for (a + e)^H Xi (a + e) - sigma2, e ~ CN(0, c I).

    Q = c Xi, q = sqrt(c) Xi a, q_scalar = a^H Xi a - sigma2.
    """
    a = np.asarray(a)
    if isinstance(Xi, Affine):
        trace = Xi.trace().real * c
        frob = Xi.flatten() * c
        qv = (Xi @ a) * math.sqrt(c)
        qs = (a.conj() @ (Xi @ a)).real - sigma2
    else:
        Xi = np.asarray(Xi)
        trace = float(np.real(np.trace(Xi))) * c
        frob = Xi.reshape(-1) * c
        qv = (Xi @ a) * math.sqrt(c)
        qs = float(np.real(a.conj() @ Xi @ a)) - sigma2
    return BtiTerms(trace, frob, qv, qs, c, Xi)


def bti_terms_pcu(Xi, hD, H_hat, theta, delta2_H, N, sigma2=1.0):
    a = np.asarray(hD) + np.asarray(H_hat).conj().T @ np.asarray(theta)
    return bti_terms(Xi, a, delta2_H * N, sigma2)


def bti_constraints(prog, terms, epsilon, name="bti", y_closed=None):
    """Emit the linear, SOC and eigenvalue rows; returns (x, y).

    ``y_closed`` replaces the eigenvalue LMI by a fixed value (reflection
    step, where Xi is constant).
    """
    L = math.log(1.0 / epsilon)
    if terms.c == 0:
        prog.add_nonneg(lift(terms.q_scalar), tag=name)
        return None, None
    x = prog.var(name + ".x", (), nonneg=True)
    prog.add_soc(x, concat([lift(terms.frob_term), lift(terms.qvec) * math.sqrt(2.0)]),
                 tag=name + ".soc")
    if y_closed is None:
        y = prog.var(name + ".y", (), nonneg=True)
        Xi = lift(terms.Xi)
        M = Xi.shape[0]
        prog.add_psd(Xi * terms.c + y.expr() * np.eye(M), tag=name + ".eig")
        yv = y.expr()
    else:
        y = float(y_closed)
        yv = y
    lin = lift(terms.trace_term) - x.expr() * math.sqrt(2.0 * L) - yv * L + terms.q_scalar
    prog.add_nonneg(lin, tag=name + ".lin")
    return x, y


def y_closed_form(Xi, c):
    """Smallest y >= 0 with y I + c Xi PSD."""
    lam = np.linalg.eigvalsh(np.asarray(Xi))
    return max(-c * lam[0], 0.0)


def bti_margin(Xi, a, c, epsilon, sigma2=1.0):
    """Slack of the linear BTI row with x and y at their smallest feasible values."""
    L = math.log(1.0 / epsilon)
    t = bti_terms(np.asarray(Xi), a, c, sigma2)
    if c == 0:
        return t.q_scalar
    x = math.sqrt(np.linalg.norm(t.frob_term) ** 2 + 2.0 * np.linalg.norm(t.qvec) ** 2)
    y = y_closed_form(Xi, c)
    return t.trace_term - math.sqrt(2.0 * L) * x - L * y + t.q_scalar


# precoder step -----------------------------------------------------------

def solve_w_scsie(channels, error, theta, R_th, sigma2=1.0, scenario=PCU, tol=None,
                  iteration=None):
    """SDR precoder step; returns (list of Psi_k, objective)."""
    tol = tol or Tolerances()
    K, M = channels.K, channels.M
    a = channels.effective(theta)

    def build():
        prog = ConicProgram("psi-step")
        Ps = [prog.hermitian_var(f"Psi{k}", M) for k in range(K)]
        for k, P in enumerate(Ps):
            prog.add_psd(P, tag=f"psd{k}")
        for k in range(K):
            Xi = xi_matrix(Ps, k, R_th)
            terms = bti_terms(Xi, a[k], error_scale(error, k, scenario), sigma2)
            bti_constraints(prog, terms, error.epsilon[k], name=f"bti{k}")
        obj = Ps[0].trace().real
        for P in Ps[1:]:
            obj = obj + P.trace().real
        prog.minimize(obj)
        return prog, Ps

    prog, Ps = build()
    rep = prog.solve(tol)
    if rep.status == "numerical_failure":
        prog, Ps = build()
        rep = prog.solve(tol.tighter())
    if not rep.ok:
        raise InfeasibleSubproblem(f"SDR precoder step returned {rep.status}", iteration,
                                   rep.status)
    out = []
    for P in Ps:
        v = rep.value(P)
        out.append(0.5 * (v + v.conj().T))
    return out, rep.objective


def rank_ratio(Psi):
    lam = np.linalg.eigvalsh(0.5 * (Psi + Psi.conj().T))
    tr = float(np.sum(np.maximum(lam, 0.0)))
    return 1.0 if tr <= 0 else float(max(lam[-1], 0.0) / tr)


def rank_one_project(Psi, h):
    """Rank-one matrix Psi h h^H Psi / (h^H Psi h) and its factor."""
    Psi = 0.5 * (Psi + Psi.conj().T)
    g = Psi @ h
    den = float(np.real(h.conj() @ g))
    if den <= 0:
        raise DegenerateRecovery("channel lies in the null space of Psi")
    w = g / math.sqrt(den)
    return np.outer(w, w.conj()), w


def rank_one_recover(Psis, a, threshold=0.9999):
    """W from SDR solutions; returns (W, ratios, projected flags)."""
    K = len(Psis)
    M = Psis[0].shape[0]
    W = np.zeros((M, K), dtype=complex)
    ratios = np.zeros(K)
    projected = np.zeros(K, dtype=bool)
    for k, P in enumerate(Psis):
        ratios[k] = rank_ratio(P)
        if ratios[k] >= threshold:
            lam, U = np.linalg.eigh(0.5 * (P + P.conj().T))
            W[:, k] = math.sqrt(max(lam[-1], 0.0)) * U[:, -1]
        else:
            _, W[:, k] = rank_one_project(P, a[k])
            projected[k] = True
    return W, ratios, projected


# reflection step ---------------------------------------------------------

def lifted_matrices(hD, H, Xi):
    """C = B^H Xi B and R = B^H Xi^2 B with B = [H^H, hD] (M x (N+1))."""
    B = np.hstack([np.asarray(H).conj().T, np.asarray(hD).reshape(-1, 1)])
    C = B.conj().T @ Xi @ B
    R = B.conj().T @ Xi @ Xi @ B
    return 0.5 * (C + C.conj().T), 0.5 * (R + R.conj().T)


def solve_theta_scsie(channels, error, W, theta_prev, R_th, sigma2=1.0, scenario=PCU,
                      randomizations=100, rng=None, tol=None, objective="sum", selection="min"):
    """SDR reflection step with Gaussian randomization.

    Returns (theta, info).  The SOC row is linearized at the previous
    reflection vector; the previous vector itself is always a candidate, so
    the selected margin never drops below the incumbent's.
    """
    tol = tol or Tolerances()
    rng = rng if rng is not None else np.random.default_rng(0)
    K, N = channels.K, channels.N
    theta_prev = project_unit(theta_prev)
    prog = ConicProgram("theta-sdr")
    T = prog.hermitian_var("Theta", N + 1, diag=np.ones(N + 1))
    prog.add_psd(T, tag="lift")
    alpha = prog.var("alpha", K)
    Xis = [xi_matrix(W, k, R_th) for k in range(K)]
    a_prev = channels.effective(theta_prev)
    inc_margin = np.array([bti_margin(Xis[k], a_prev[k], error_scale(error, k, scenario),
                                      error.epsilon[k], sigma2) for k in range(K)])
    for k in range(K):
        c = error_scale(error, k, scenario)
        L = math.log(1.0 / error.epsilon[k])
        C, R = lifted_matrices(channels.hD[k], channels.H[k], Xis[k])
        qs = (T @ C).trace().real - sigma2
        # never worse than the incumbent for any single user
        prog.add_nonneg(alpha[k] - min(0.0, inc_margin[k]) + 1e-9, tag=f"floor{k}")
        if c == 0:
            prog.add_nonneg(qs - alpha[k], tag=f"bti{k}")
            continue
        y = y_closed_form(Xis[k], c)
        x = prog.var(f"x{k}", (), nonneg=True)
        xn = math.sqrt(c * c * np.linalg.norm(Xis[k]) ** 2
                       + 2.0 * c * np.real(np.vdot(a_prev[k], Xis[k] @ Xis[k] @ a_prev[k])))
        xn = max(xn, 1e-12)
        # c^2 ||Xi||^2 + 2c Tr(R Theta) <= 2 xn x - xn^2
        soc = (xn * xn + c * c * np.linalg.norm(Xis[k]) ** 2) - x.expr() * (2.0 * xn) \
            + (T @ R).trace().real * (2.0 * c)
        prog.add_nonneg(-soc, tag=f"soc{k}")
        lin = c * np.real(np.trace(Xis[k])) - x.expr() * math.sqrt(2.0 * L) - L * y + qs
        prog.add_nonneg(lin - alpha[k], tag=f"bti{k}")
    if objective == "sum":
        prog.maximize(alpha.sum())
    else:
        tmin = prog.var("tmin")
        prog.add_nonneg(alpha - tmin.expr(), tag="maxmin")
        prog.maximize(tmin)
    rep = prog.solve(tol)
    if rep.status == "numerical_failure":
        rep = prog.solve(tol.tighter())
    info = {"status": rep.status, "incumbent_margin": float(inc_margin.min())}
    if not rep.ok:
        info.update(selected_margin=float(inc_margin.min()), flagged=True, candidates=0)
        return theta_prev, info
    That = rep.value(T)
    That = 0.5 * (That + That.conj().T)
    info.update(sdr_objective=rep.objective, lift_rank_ratio=rank_ratio(That))
    cands = gaussian_candidates(That, randomizations, rng)
    cands.append(theta_prev)
    per = []
    for th in cands:
        a = channels.effective(th)
        per.append([bti_margin(Xis[k], a[k], error_scale(error, k, scenario),
                               error.epsilon[k], sigma2) for k in range(K)])
    per = np.array(per)
    margins = per.min(axis=1)
    if selection == "min":
        best = int(np.argmax(margins))
    else:
        score = np.where(margins >= -1e-9, per.sum(axis=1), -np.inf)
        best = int(np.argmax(score)) if np.isfinite(score).any() else int(np.argmax(margins))
    info.update(selected_margin=float(margins[best]), flagged=bool(margins[best] < 0),
                candidates=len(cands), margins=margins)
    return cands[best], info


def gaussian_candidates(That, count, rng):
    """Unit-modulus candidates from a lifted reflection matrix.

    The leading eigenvector is included along with ``count`` Gaussian draws.
    """
    lam, U = np.linalg.eigh(That)
    lam = np.maximum(lam, 0.0)
    F = U * np.sqrt(lam)
    out = [_dehomog(U[:, -1])]
    for _ in range(count):
        r = (rng.standard_normal(len(lam)) + 1j * rng.standard_normal(len(lam))) / math.sqrt(2)
        out.append(_dehomog(F @ r))
    return out


def _dehomog(v):
    t = v[-1]
    if abs(t) > 0:
        v = v * (np.conj(t) / abs(t))
    return project_unit(v[:-1])


# alternating optimization ------------------------------------------------

def _w_step(ch, err, theta, R_th, scenario, params, n):
    Psis, obj = solve_w_scsie(ch, err, theta, R_th, 1.0, scenario, params.tol, n)
    a = ch.effective(theta)
    W, ratios, projected = rank_one_recover(Psis, a, params.rank_threshold)
    tr_before = np.array([np.real(np.trace(P)) for P in Psis])
    tr_after = np.sum(np.abs(W) ** 2, axis=0)
    return W, dict(ratios=ratios, projected=projected, trace_sdr=tr_before,
                   trace_rank_one=tr_after, sdr_objective=obj)


def ao_statistical(channels, error, R_th, sigma2, params=None, scenario=PCU, rng=None,
                   theta0=None, algorithm=None):
    """Outage-constrained AO design; returns a BeamformingSolution."""
    params = params or StatisticalDesignParams()
    rng = rng if rng is not None else np.random.default_rng(0)
    ch, err = normalize(channels, sigma2, error)
    theta = project_unit(theta0) if theta0 is not None else random_theta(rng, ch.N)
    try:
        W, winfo = _w_step(ch, err, theta, R_th, scenario, params, 0)
    except InfeasibleSubproblem as exc:
        raise InfeasibleSubproblem("initial outage-constrained precoder step infeasible; "
                                   "relax R_th or the uncertainty level", 0, exc.status) from exc
    p = float(np.linalg.norm(W) ** 2)
    rank_log = [winfo]
    trace = [dict(iter=0, power_w_step=p, power_theta_step=p, ccp_iters=0, status="ok",
                  rank_ratio_max=float(winfo["ratios"].min()), randomization_margin=float("nan"))]
    converged = False
    status = "ok"
    for n in range(1, params.ao_max_iter + 1):
        th_new, tinfo = solve_theta_scsie(ch, err, W, theta, R_th, 1.0, scenario,
                                          params.randomizations, rng, params.tol,
                                          params.objective, params.selection)
        try:
            W_new, winfo = _w_step(ch, err, th_new, R_th, scenario, params, n)
        except (InfeasibleSubproblem, DegenerateRecovery):
            trace.append(dict(iter=n, power_w_step=p, power_theta_step=p, ccp_iters=0,
                              status="rejected-infeasible", rank_ratio_max=float("nan"),
                              randomization_margin=tinfo["selected_margin"]))
            converged = True
            status = "stalled"
            break
        rank_log.append(winfo)
        p_new = float(np.linalg.norm(W_new) ** 2)
        row = dict(iter=n, power_theta_step=p, ccp_iters=0,
                   rank_ratio_max=float(winfo["ratios"].min()),
                   randomization_margin=tinfo["selected_margin"])
        if p_new > p:
            row.update(power_w_step=p, status="rejected")
            trace.append(row)
            converged = True
            break
        row.update(power_w_step=p_new, status="ok")
        trace.append(row)
        rel = (p - p_new) / p
        W, theta, p = W_new, th_new, p_new
        if rel < params.ao_tol:
            converged = True
            break
    name = algorithm or f"scsie-{scenario.lower()}"
    sol = BeamformingSolution(W, theta, float(np.linalg.norm(W) ** 2), trace, status, name,
                              converged)
    sol.extra["rank"] = rank_log
    return sol


def solve_scsie_fcu(channels, error, R_th, sigma2, params=None, rng=None, theta0=None):
    return ao_statistical(channels, error, R_th, sigma2, params, FCU, rng, theta0)
