"""Worst-case power minimization under norm-bounded cascaded CSI errors.

The precoder step and the reflection step are alternated.  Both rely on a
tangent lower bound of the useful-signal power,

    |z|^2 >= 2 Re{z z_n^*} - |z_n|^2,

expanded at the previous iterate, which turns the worst-case QoS constraint
into an S-procedure LMI.  Interference is handled with the sign-definiteness
lemma.  The reflection step uses a penalty convex-concave procedure for the
unit-modulus constraint.

Internally every solver works on noise-normalized data (channels divided by
sigma, noise power 1); transmit powers are unaffected by that scaling.
"""

from dataclasses import dataclass, field
import math

import numpy as np

from .conic import (Affine, ConicProgram, InfeasibleSubproblem, Tolerances, concat, kron,
                    lift, outer, s_procedure_lmi, sign_definiteness_lmi, bmat)

PCU, FCU = "PCU", "FCU"


@dataclass
class BoundedDesignParams:
    ao_tol: float = 1e-3
    ao_max_iter: int = 30
    nu0: float = 1e-3
    gamma: float = 2.0
    nu_max: float = 1e4
    chi: float = 1e-5
    eps_stop: float = 1e-4
    T_max: int = 30
    restarts: int = 3
    tol: Tolerances = field(default_factory=Tolerances)

    def __post_init__(self):
        if self.gamma <= 1:
            raise ValueError("penalty growth must exceed 1")
        for name in ("ao_tol", "nu0", "nu_max", "chi", "eps_stop"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


@dataclass
class BeamformingSolution:
    W: np.ndarray
    theta: np.ndarray
    power: float
    trace: list
    status: str = "ok"
    algorithm: str = ""
    converged: bool = False
    extra: dict = field(default_factory=dict)

    @property
    def ao_iters(self):
        return max(0, len(self.trace) - 1)

    def power_trace(self):
        return np.array([row["power_w_step"] for row in self.trace])


class CCPFailure(RuntimeError):
    pass


def random_theta(rng, N):
    return np.exp(2j * np.pi * rng.random(N))


def project_unit(theta):
    theta = np.asarray(theta, dtype=complex)
    mag = np.abs(theta)
    return np.where(mag > 0, theta / np.where(mag > 0, mag, 1.0), 1.0 + 0j)


def normalize(channels, sigma2, model=None):
    s = 1.0 / math.sqrt(sigma2)
    return channels.scaled(s), (None if model is None else model.scaled(s))


# surrogate ---------------------------------------------------------------

@dataclass
class Surrogate:
    """x^H A x + 2 Re{e^T x} + e_scalar lower-bounds |z|^2.

    ``x = vec(dH^*)`` (PCU) or ``x = [dh; vec(dH^*)]`` (FCU), column-major.
    Entries are Affine in the active block or plain arrays.
    """
    A: object
    e: object
    e_scalar: object
    full: bool
    M: int

    def value(self, dH, dh=None):
        A = _num(self.A)
        e = _num(self.e)
        c = float(np.real(_num(self.e_scalar)))
        x = np.asarray(dH).conj().reshape(-1, order="F")
        if self.full:
            dh = np.zeros(self.M, dtype=complex) if dh is None else np.asarray(dh)
            x = np.concatenate([dh, x])
        return float(np.real(x.conj() @ A @ x) + 2 * np.real(e @ x) + c)


def _num(a):
    if isinstance(a, Affine):
        if not a.is_constant():
            raise ValueError("surrogate still depends on decision variables")
        return a.const
    return np.asarray(a)


def _cat(a, b):
    if isinstance(a, Affine) or isinstance(b, Affine):
        return concat([a, b])
    return np.concatenate([a, b])


def _signal(hD, H, w, theta):
    """z = (h_D^H + theta^H H) w for affine w or theta."""
    if isinstance(theta, Affine):
        return hD.conj() @ w + theta.conj() @ (H @ w)
    return hD.conj() @ w + theta.conj() @ (H @ w)


def build_surrogate(hD, H, w, theta, w_prev, theta_prev, full=False):
    """Tangent lower bound of the useful-signal power at (w_prev, theta_prev).

    Either ``w`` or ``theta`` may be affine; the other must equal its
    previous value for the bound to be tight.
    """
    hD = np.asarray(hD)
    H = np.asarray(H)
    w_prev = np.asarray(w_prev)
    theta_prev = np.asarray(theta_prev)
    M = hD.shape[0]
    th_c = theta.conj() if isinstance(theta, Affine) else np.conj(theta)
    v = kron(w, th_c)
    v_n = np.kron(w_prev, np.conj(theta_prev))
    u = _cat(w, v) if full else v
    u_n = np.concatenate([w_prev, v_n]) if full else v_n
    z0 = _signal(hD, H, w, theta)
    z0n = complex(_signal(hD, H, w_prev, theta_prev))
    A = outer(u, u_n) + outer(u_n, u) - outer(u_n, u_n)
    u_c = u.conj() if isinstance(u, Affine) else np.conj(u)
    e = u_c * z0n + z0 * np.conj(u_n) - z0n * np.conj(u_n)
    if isinstance(z0, Affine):
        e_scalar = (z0 * np.conj(z0n)).real * 2.0 - abs(z0n) ** 2
    else:
        e_scalar = 2.0 * np.real(z0 * np.conj(z0n)) - abs(z0n) ** 2
    return Surrogate(A, e, e_scalar, full, M)


def surrogate_pcu(hD, H_hat, w_prev, theta_prev, active_block="w", var=None):
    """PCU surrogate affine in ``var`` (the active block), or numeric if var is None."""
    w = var if (active_block == "w" and var is not None) else w_prev
    th = var if (active_block == "theta" and var is not None) else theta_prev
    return build_surrogate(hD, H_hat, w, th, w_prev, theta_prev, full=False)


def surrogate_fcu(hD_hat, H_hat, w_prev, theta_prev, active_block="w", var=None):
    w = var if (active_block == "w" and var is not None) else w_prev
    th = var if (active_block == "theta" and var is not None) else theta_prev
    return build_surrogate(hD_hat, H_hat, w, th, w_prev, theta_prev, full=True)


def true_signal_power(hD, H, w, theta, dH=None, dh=None):
    g = np.asarray(hD, dtype=complex).copy()
    Ht = np.asarray(H, dtype=complex)
    if dh is not None:
        g = g + dh
    if dH is not None:
        Ht = Ht + dH
    return float(abs(g.conj() @ w + np.conj(theta) @ (Ht @ w)) ** 2)


# LMI builders ------------------------------------------------------------

def build_qos_lmi(prog, surr, iota_k, xi_H, R_th, alpha_k=None, xi_D=0.0, name="qos"):
    """Worst-case QoS block; returns the S-procedure multipliers.

    Error coordinates with zero radius are removed exactly.  With no active
    error the constraint is the scalar surrogate >= iota (2^R - 1).
    """
    gam = 2.0 ** R_th - 1.0
    g0 = lift(surr.e_scalar) - lift(iota_k) * gam
    if alpha_k is not None:
        g0 = g0 - alpha_k
    M = surr.M
    n = lift(surr.A).shape[0]
    pieces = []
    if surr.full and xi_D > 0:
        pieces.append((0, M, xi_D))
    if xi_H > 0:
        pieces.append((M if surr.full else 0, n, xi_H))
    if not pieces:
        prog.add_nonneg(g0, tag=name)
        return []
    A = lift(surr.A)
    e = lift(surr.e)
    if len(pieces) == 1:
        a, b, xi = pieces[0]
        E0 = A[a:b, a:b]
        e0 = e[a:b].conj()
        block, rhos = s_procedure_lmi(prog, E0, e0, g0, xi, name=name + ".rho")
    else:
        E0, e0 = A, e.conj()
        block, rhos = s_procedure_lmi(prog, E0, e0, g0, [xi_D, xi_H], sizes=[M, n - M],
                                      name=name + ".rho")
    prog.add_psd(block, tag=name)
    return rhos


build_qos_lmi_pcu = build_qos_lmi


def build_in_lmi(prog, r_hat, W_minus, iota_k, sigma2, N, xi_H, xi_D=0.0, reduced=False,
                 in_theta_step=False, name="in"):
    """Worst-case interference ||(h^H + theta^H (H+dH)) W_-k||^2 + sigma2 <= iota_k.

    Full block of the sign-definiteness lemma; ``reduced`` keeps only the
    theta-dependent corner and is accepted only inside the reflection step.
    """
    if reduced and not in_theta_step:
        raise ValueError("reduced interference block is only valid with W fixed")
    iota_k = lift(iota_k)
    if W_minus is None or lift(W_minus).shape[1] == 0:
        prog.add_nonneg(iota_k - sigma2, tag=name)
        return []
    r = lift(r_hat).reshape(-1, 1)
    K1 = r.shape[0]
    corner = (iota_k - sigma2).reshape(1, 1)
    E = bmat([[corner, r.H], [r, np.eye(K1)]])
    if reduced:
        mu = prog.var(name + ".mu", (), nonneg=True)
        E = E - mu.expr() * (N * _e0(K1 + 1))
        prog.add_psd(E, tag=name)
        return [mu]
    Wm = lift(W_minus)
    M = Wm.shape[0]
    Y = bmat([[np.zeros((M, 1)), Wm]])
    e0 = _e0(K1 + 1)
    block, taus = sign_definiteness_lmi(prog, E, [Y, Y], [N * e0, e0], [xi_H, xi_D],
                                        name=name + ".mu")
    prog.add_psd(block, tag=name)
    return taus


build_in_lmi_pcu = build_in_lmi


def _e0(n):
    m = np.zeros((n, n))
    m[0, 0] = 1.0
    return m


# precoder step -----------------------------------------------------------

def nominal_precoder(a, R_th, sigma2=1.0, tol=None):
    """Perfect-CSI power minimization via the phase-rotated SOCP.

    ``a`` holds the effective channels (K x M).  Falls back to a scaled
    regularized zero-forcing precoder if the SOCP fails.
    """
    K, M = a.shape
    gam = 2.0 ** R_th - 1.0
    prog = ConicProgram("nominal")
    W = prog.complex_var("W", (M, K))
    t = prog.var("t")
    prog.add_rotated_soc(W.flatten(), t, 1.0, tag="power")
    fac = math.sqrt(1.0 + 1.0 / gam)
    for k in range(K):
        s = a[k].conj() @ W[:, k]
        prog.add_eq(s.imag, tag=f"phase{k}")
        interf = concat([(a[k].conj() @ W), lift(np.array([math.sqrt(sigma2)]))])
        prog.add_soc(s.real * fac, interf, tag=f"sinr{k}")
    prog.minimize(t)
    rep = prog.solve(tol)
    if rep.ok:
        return rep.value(W)
    return rzf_precoder(a, R_th, sigma2)


def rzf_precoder(a, R_th, sigma2=1.0):
    """Regularized zero-forcing directions scaled until every SINR meets the target."""
    K, M = a.shape
    gam = 2.0 ** R_th - 1.0
    A = a.conj()                       # K x M, row k = a_k^H
    D = A.conj().T @ np.linalg.inv(A @ A.conj().T + 1e-6 * np.eye(K))
    D = D / np.linalg.norm(D, axis=0, keepdims=True)
    p = np.ones(K)
    for _ in range(200):
        W = D * np.sqrt(p)
        G = np.abs(A @ W) ** 2
        sig = np.diag(G)
        interf = G.sum(axis=1) - sig + sigma2
        need = gam * interf / np.maximum(sig / p, 1e-300)
        if np.all(sig >= gam * interf * (1 - 1e-9)):
            return W
        p = np.maximum(p, need * 1.01)
    return D * np.sqrt(p)


def _others(K, k):
    return [i for i in range(K) if i != k]


def solve_w_bounded(channels, error, theta, W_prev, R_th, sigma2=1.0, scenario=PCU,
                    tol=None, iteration=None):
    """Precoder step: min ||W||_F^2 under worst-case QoS and interference LMIs."""
    tol = tol or Tolerances()
    K, M, N = channels.K, channels.M, channels.N
    full = scenario == FCU
    xi_D = error.xi_D if full else np.zeros(K)

    def build():
        prog = ConicProgram("w-step")
        W = prog.complex_var("W", (M, K))
        iota = prog.var("iota", K)
        t = prog.var("t")
        prog.add_rotated_soc(W.flatten(), t, 1.0, tag="power")
        a = channels.effective(theta)
        for k in range(K):
            surr = build_surrogate(channels.hD[k], channels.H[k], W[:, k], theta,
                                   W_prev[:, k], theta, full=full)
            build_qos_lmi(prog, surr, iota[k], error.xi_H[k], R_th, xi_D=xi_D[k], name=f"qos{k}")
            oth = _others(K, k)
            Wm = W[:, oth] if oth else None
            r = (Wm.H @ a[k]) if oth else None
            build_in_lmi(prog, r, Wm, iota[k], sigma2, N, error.xi_H[k], xi_D[k], name=f"in{k}")
        prog.minimize(t)
        return prog, W, iota

    prog, W, iota = build()
    rep = prog.solve(tol)
    if rep.status == "numerical_failure":
        prog, W, iota = build()
        rep = prog.solve(tol.tighter())
    if not rep.ok:
        raise InfeasibleSubproblem(f"precoder step returned {rep.status}", iteration, rep.status)
    Wv = rep.value(W)
    return Wv, rep.value(iota), float(np.linalg.norm(Wv) ** 2)


# reflection step ---------------------------------------------------------

def ccp_theta_step(channels, error, W, theta_point, nu, R_th, sigma2=1.0, scenario=PCU,
                   tol=None, alpha_scale=None):
    """One penalty-CCP subproblem; returns (theta, b, alpha, objective).

    ``alpha_scale`` (per user) divides the QoS slacks in the objective so the
    penalty weight is comparable across channel scalings.
    """
    tol = tol or Tolerances()
    K, M, N = channels.K, channels.M, channels.N
    full = scenario == FCU
    xi_D = error.xi_D if full else np.zeros(K)
    theta_point = np.asarray(theta_point, dtype=complex)
    if np.any(np.abs(theta_point) == 0):
        raise ValueError("linearization point must have nonzero entries")
    prog = ConicProgram("theta-step")
    th = prog.complex_var("theta", N)
    b = prog.var("b", 2 * N, nonneg=True)
    alpha = prog.var("alpha", K, nonneg=True)
    iota = prog.var("iota", K)
    a = channels.hD + 0j
    for k in range(K):
        surr = build_surrogate(channels.hD[k], channels.H[k], W[:, k], th,
                               W[:, k], theta_point, full=full)
        build_qos_lmi(prog, surr, iota[k], error.xi_H[k], R_th, alpha_k=alpha[k],
                      xi_D=xi_D[k], name=f"qos{k}")
        oth = _others(K, k)
        if oth:
            ak = a[k] + channels.H[k].conj().T @ th
            Wm = W[:, oth]
            r = Wm.conj().T @ ak
            build_in_lmi(prog, r, Wm, iota[k], sigma2, N, error.xi_H[k], xi_D[k],
                         in_theta_step=True, name=f"in{k}")
        else:
            prog.add_nonneg(iota[k] - sigma2, tag=f"in{k}")
    # linearized |theta_n|^2 >= 1 and |theta_n|^2 <= 1 + b_{N+n}
    lin = (th.conj() * theta_point).real * 2.0 - np.abs(theta_point) ** 2
    prog.add_nonneg(b[:N] - 1.0 + lin, tag="unit-lower")
    for n in range(N):
        prog.add_rotated_soc(th[n].reshape(1), b[N + n] + 1.0, 1.0, tag=f"unit-upper{n}")
    scale = np.ones(K) if alpha_scale is None else np.asarray(alpha_scale, dtype=float)
    # dividing by max(1, nu) keeps the objective well scaled as nu grows
    obj_scale = max(1.0, nu)
    obj = (alpha * (1.0 / (scale * obj_scale))).sum() - b.sum() * (nu / obj_scale)
    prog.maximize(obj)
    rep = prog.solve(tol)
    if rep.status == "numerical_failure":
        rep = prog.solve(tol.tighter())
    if not rep.ok:
        raise InfeasibleSubproblem(f"reflection step returned {rep.status}", None, rep.status)
    return rep.value(th), rep.value(b), rep.value(alpha), rep.objective * obj_scale


def penalty_ccp(channels, error, W, params, R_th, sigma2=1.0, scenario=PCU, theta0=None,
                rng=None):
    """Penalty CCP for the reflection vector with W fixed.

    Returns (theta, info).  The first attempt starts at ``theta0`` (the
    current AO iterate); restarts draw fresh random unit-modulus points.
    """
    N = channels.N
    rng = rng if rng is not None else np.random.default_rng(0)
    # signal scale per user for the objective weighting
    a_scale = None
    total_iters = 0
    history = []
    for attempt in range(params.restarts + 1):
        if attempt == 0 and theta0 is not None:
            th = np.asarray(theta0, dtype=complex)
        else:
            th = random_theta(rng, N)
        if a_scale is None:
            gam = 2.0 ** R_th - 1.0
            a_scale = np.full(channels.K, max(gam, 1e-12) * sigma2)
        nu = params.nu0
        prev = th
        for t in range(params.T_max):
            try:
                th_new, b, alpha, obj = ccp_theta_step(channels, error, W, prev, nu, R_th, sigma2,
                                                      scenario, params.tol, a_scale)
            except InfeasibleSubproblem:
                total_iters += t + 1
                break
            history.append(nu)
            moved = float(np.sum(np.abs(th_new - prev)))
            prev = th_new
            nu = min(params.gamma * nu, params.nu_max)
            if np.sum(b) <= params.chi and moved <= params.eps_stop:
                total_iters += t + 1
                return project_unit(th_new), {"iters": total_iters, "restarts": attempt,
                                              "b1": float(np.sum(b)), "nu": history}
        else:
            total_iters += params.T_max
    raise CCPFailure(f"penalty CCP did not converge after {params.restarts} restarts")


# alternating optimization ------------------------------------------------

def ao_bounded(channels, error, R_th, sigma2, params=None, scenario=PCU, rng=None,
               theta0=None, algorithm=None):
    """Worst-case AO design; returns a BeamformingSolution in physical units."""
    params = params or BoundedDesignParams()
    rng = rng if rng is not None else np.random.default_rng(0)
    ch, err = normalize(channels, sigma2, error)
    N = ch.N
    theta = project_unit(theta0) if theta0 is not None else random_theta(rng, N)
    W0 = nominal_precoder(ch.effective(theta), R_th, 1.0, params.tol)
    try:
        W, iota, p = solve_w_bounded(ch, err, theta, W0, R_th, 1.0, scenario, params.tol, 0)
    except InfeasibleSubproblem as exc:
        raise InfeasibleSubproblem("initial worst-case precoder step infeasible; "
                                   "relax R_th or shrink the uncertainty radius", 0,
                                   exc.status) from exc
    trace = [dict(iter=0, power_w_step=p, power_theta_step=p, ccp_iters=0, status="ok")]
    converged = False
    status = "ok"
    for n in range(1, params.ao_max_iter + 1):
        try:
            th_new, info = penalty_ccp(ch, err, W, params, R_th, 1.0, scenario, theta0=theta, rng=rng)
            ccp_iters = info["iters"]
        except CCPFailure:
            th_new, ccp_iters = theta, -1
        try:
            W_new, iota_new, p_new = solve_w_bounded(ch, err, th_new, W, R_th, 1.0, scenario,
                                                     params.tol, n)
        except InfeasibleSubproblem:
            trace.append(dict(iter=n, power_w_step=p, power_theta_step=p, ccp_iters=ccp_iters,
                              status="rejected-infeasible"))
            converged = True
            status = "stalled"
            break
        if p_new > p:
            # safeguard: never accept an increase caused by projection or solver slack
            trace.append(dict(iter=n, power_w_step=p, power_theta_step=p, ccp_iters=ccp_iters,
                              status="rejected"))
            converged = True
            break
        rel = (p - p_new) / p
        trace.append(dict(iter=n, power_w_step=p_new, power_theta_step=p, ccp_iters=ccp_iters,
                          status="ok"))
        W, theta, p = W_new, th_new, p_new
        if rel < params.ao_tol:
            converged = True
            break
    name = algorithm or f"bcsie-{scenario.lower()}"
    return BeamformingSolution(W, theta, float(np.linalg.norm(W) ** 2), trace, status, name,
                               converged)
