"""Rates, Monte-Carlo certification, brute-force oracles and baselines."""

from dataclasses import dataclass, field
import io
import math

import numpy as np

from .conic import ConicProgram, hermitian_embed, s_procedure_lmi, schur_lift, \
    sign_definiteness_lmi, svec_vec_identity
from .robust_bounded import PCU, FCU, build_surrogate, true_signal_power, project_unit
from .robust_statistical import (StatisticalDesignParams, ao_statistical, bti_terms,
                                 rank_one_project, y_closed_form)
from .uncertainty import StatisticalErrorModel, sample_bounded, sample_statistical


# rates ----------------------------------------------------------------------

def rate(channels, W, theta, sigma2):
    """Per-user achievable rate log2(1 + SINR_k) in bit/s/Hz."""
    a = channels.effective(theta)          # K x M, row k = h_k (so h_k^H w = conj(a_k) @ w)
    G = np.abs(a.conj() @ W) ** 2          # G[k, i] = |h_k^H w_i|^2
    sig = np.diag(G)
    interf = G.sum(axis=1) - sig
    return np.log2(1.0 + sig / (interf + sigma2))


def _rates_from_effective(g, W, k, sigma2):
    """Rate of user k for a batch of effective channels g (T x M)."""
    G = np.abs(g.conj() @ W) ** 2
    sig = G[:, k]
    interf = G.sum(axis=1) - sig
    return np.log2(1.0 + sig / (interf + sigma2))


def wilson_interval(successes, n, z=1.959963984540054):
    if n <= 0:
        raise ValueError("need at least one trial")
    p = successes / n
    den = 1.0 + z * z / n
    centre = (p + z * z / (2 * n)) / den
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / den
    lo = 0.0 if successes == 0 else max(0.0, centre - half)
    hi = 1.0 if successes == n else min(1.0, centre + half)
    return lo, hi


def _perturbed_effective(channels, theta, k, dH, dh):
    """h_k + dh + (H_k + dH)^H theta for a batch of errors (T x N x M, T x M)."""
    base = channels.hD[k] + channels.H[k].conj().T @ theta
    e = np.einsum("tnm,n->tm", dH.conj(), theta)
    return base[None, :] + dh + e


def empirical_outage(W, theta, channels, error, R_th, sigma2, trials=10_000, rng=None,
                     chunk=5000):
    """Per-user outage fraction and Wilson 95% intervals; returns (p, lo, hi)."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    rng = rng if rng is not None else np.random.default_rng(0)
    K = channels.K
    fails = np.zeros(K, dtype=int)
    for k in range(K):
        done = 0
        while done < trials:
            t = min(chunk, trials - done)
            real = sample_statistical(error, k, rng, size=t)
            g = _perturbed_effective(channels, theta, k, real.dH, real.dh)
            fails[k] += int(np.sum(_rates_from_effective(g, W, k, sigma2) < R_th))
            done += t
    p = fails / trials
    ci = [wilson_interval(f, trials) for f in fails]
    return p, np.array([c[0] for c in ci]), np.array([c[1] for c in ci])


def worst_case_margin(W, theta, channels, error, R_th, sigma2, samples=1000, rng=None,
                      boundary_fraction=0.7):
    """Smallest sampled rate per user over the error balls (boundary-biased)."""
    rng = rng if rng is not None else np.random.default_rng(0)
    K = channels.K
    nb = int(round(boundary_fraction * samples))
    flags = np.zeros(samples, dtype=bool)
    flags[:nb] = True
    worst = np.zeros(K)
    for k in range(K):
        real = sample_bounded(error, k, rng, on_boundary=flags, size=samples)
        g = _perturbed_effective(channels, theta, k, real.dH, real.dh)
        r = _rates_from_effective(g, W, k, sigma2)
        nominal = rate(channels, W, theta, sigma2)[k]
        worst[k] = min(float(r.min()), float(nominal))
    return worst


@dataclass
class ValidationReport:
    nominal_rate: np.ndarray
    outage: np.ndarray = None
    outage_ci_lo: np.ndarray = None
    outage_ci_hi: np.ndarray = None
    worst_case_rate: np.ndarray = None
    oracles: list = field(default_factory=list)

    def to_csv(self):
        out = io.StringIO()
        out.write("user,nominal_rate,outage,outage_ci_lo,outage_ci_hi,worst_case_rate\n")
        K = len(self.nominal_rate)

        def col(a, k):
            return "" if a is None else repr(float(a[k]))

        for k in range(K):
            out.write(f"{k},{float(self.nominal_rate[k])!r},{col(self.outage, k)},"
                      f"{col(self.outage_ci_lo, k)},{col(self.outage_ci_hi, k)},"
                      f"{col(self.worst_case_rate, k)}\n")
        return out.getvalue()


def validate_solution(W, theta, channels, R_th, sigma2, statistical=None, bounded=None,
                      trials=10_000, samples=1000, seed=0):
    if trials < 1 or samples < 1:
        raise ValueError("trials and samples must be >= 1")
    ss = np.random.SeedSequence(seed)
    r1, r2 = [np.random.default_rng(s) for s in ss.spawn(2)]
    rep = ValidationReport(rate(channels, W, theta, sigma2))
    if statistical is not None:
        rep.outage, rep.outage_ci_lo, rep.outage_ci_hi = empirical_outage(
            W, theta, channels, statistical, R_th, sigma2, trials, r1)
    if bounded is not None:
        rep.worst_case_rate = worst_case_margin(W, theta, channels, bounded, R_th, sigma2,
                                                samples, r2)
    return rep


# baselines ------------------------------------------------------------------

def baseline_nonrobust(channels, R_th, sigma2, rng=None, params=None, theta0=None):
    """Perfect-CSI design: the outage pipeline with zero error variance."""
    K, N, M = channels.K, channels.N, channels.M
    model = StatisticalErrorModel(np.zeros(K), np.zeros(K), np.full(K, 0.5), N, M)
    return ao_statistical(channels, model, R_th, sigma2, params or StatisticalDesignParams(),
                          PCU, rng, theta0, algorithm="nonrobust")


def quantize_phases(theta, bits):
    """Snap each phase to the nearest point of {2 pi m / 2^bits}."""
    if bits < 1:
        raise ValueError("bits must be >= 1")
    L = 2 ** int(bits)
    ph = np.angle(np.asarray(theta))
    m = np.round(ph * L / (2 * np.pi)) % L
    return np.exp(2j * np.pi * m / L)


# oracle suite ---------------------------------------------------------------

@dataclass
class OracleResult:
    name: str
    max_deviation: float
    draws: int
    tol: float = 1e-9

    @property
    def passed(self):
        return bool(np.isfinite(self.max_deviation) and self.max_deviation < self.tol)


def _crandn(rng, *shape):
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / math.sqrt(2)


def _rel(a, b):
    return abs(a - b) / max(1.0, abs(a), abs(b))


def oracle_trace_identity(rng, draws=100):
    dev = 0.0
    for _ in range(draws):
        m, n = rng.integers(1, 5, size=2)
        A, C = _crandn(rng, m, n), _crandn(rng, m, n)
        B, D = _crandn(rng, m, m), _crandn(rng, n, n)
        lhs, rhs = svec_vec_identity(A, B, C, D)
        dev = max(dev, _rel(lhs, rhs))
    return OracleResult("trace-kronecker identity", dev, draws)


def _explicit_pcu_quadratic(Xi, a, theta, d2):
    """Explicit Q, q for x = vec(dH^*)/delta, e = dH^H theta."""
    M = Xi.shape[0]
    Jm = np.kron(np.eye(M), theta.reshape(1, -1)) * math.sqrt(d2)   # e = Jm x
    Q = Jm.conj().T @ Xi @ Jm
    q = Jm.conj().T @ Xi @ a
    return Q, q, Jm


def oracle_bti_pcu(rng, draws=100):
    dev = 0.0
    for _ in range(draws):
        M, N = rng.integers(1, 5, size=2)
        X = _crandn(rng, M, M)
        Xi = 0.5 * (X + X.conj().T)
        a = _crandn(rng, M)
        theta = np.exp(2j * np.pi * rng.random(N))
        d2 = float(rng.random()) + 0.1
        Q, q, Jm = _explicit_pcu_quadratic(Xi, a, theta, d2)
        t = bti_terms(Xi, a, d2 * N, 1.0)
        dev = max(dev, _rel(np.real(np.trace(Q)), t.trace_term),
                  _rel(np.linalg.norm(Q), np.linalg.norm(t.frob_term)),
                  _rel(np.linalg.norm(q) ** 2, np.linalg.norm(t.qvec) ** 2),
                  _rel(max(-np.linalg.eigvalsh(Q)[0], 0.0), y_closed_form(Xi, d2 * N)))
        # the quadratic form itself at a random error
        dH = _crandn(rng, N, M)
        x = dH.conj().reshape(-1, order="F") / math.sqrt(d2)
        g = a + dH.conj().T @ theta
        direct = np.real(g.conj() @ Xi @ g) - 1.0
        form = np.real(x.conj() @ Q @ x + 2 * np.real(np.vdot(q, x))) + t.q_scalar
        dev = max(dev, _rel(direct, form))
    return OracleResult("BTI terms, cascaded errors", dev, draws)


def oracle_bti_fcu(rng, draws=100):
    dev = 0.0
    for _ in range(draws):
        M, N = rng.integers(1, 4, size=2)
        X = _crandn(rng, M, M)
        Xi = 0.5 * (X + X.conj().T)
        a = _crandn(rng, M)
        theta = np.exp(2j * np.pi * rng.random(N))
        dD, dH2 = float(rng.random()) + 0.1, float(rng.random()) + 0.1
        J = np.hstack([np.eye(M) * math.sqrt(dD),
                       np.kron(np.eye(M), theta.reshape(1, -1)) * math.sqrt(dH2)])
        Q = J.conj().T @ Xi @ J
        q = J.conj().T @ Xi @ a
        c = dD + dH2 * N
        t = bti_terms(Xi, a, c, 1.0)
        dev = max(dev, _rel(np.real(np.trace(Q)), t.trace_term),
                  _rel(np.linalg.norm(Q), np.linalg.norm(t.frob_term)),
                  _rel(np.linalg.norm(q) ** 2, np.linalg.norm(t.qvec) ** 2),
                  _rel(max(-np.linalg.eigvalsh(Q)[0], 0.0), y_closed_form(Xi, c)))
    return OracleResult("BTI terms, full errors", dev, draws)


def oracle_schur(rng, draws=100):
    dev = 0.0
    for _ in range(draws):
        m = int(rng.integers(1, 6))
        r = _crandn(rng, m)
        t = float(np.linalg.norm(r) ** 2 + rng.standard_normal())
        S = schur_lift(t, r).const
        dev = max(dev, _rel(np.real(np.linalg.det(S)), t - np.linalg.norm(r) ** 2))
        lam = np.linalg.eigvalsh(S)[0]
        if (lam >= -1e-12) != (t - np.linalg.norm(r) ** 2 >= -1e-12):
            dev = math.inf
    return OracleResult("Schur complement lift", dev, draws)


def oracle_hermitian_embedding(rng, draws=100):
    dev = 0.0
    for _ in range(draws):
        n = int(rng.integers(1, 6))
        X = _crandn(rng, n, n)
        H = 0.5 * (X + X.conj().T)
        S = hermitian_embed(H)
        lh = np.sort(np.repeat(np.linalg.eigvalsh(H), 2))
        ls = np.sort(np.linalg.eigvalsh(S))
        dev = max(dev, float(np.max(np.abs(lh - ls)) / max(1.0, np.abs(lh).max())))
        x = _crandn(rng, n)
        xr = np.concatenate([x.real, x.imag])
        dev = max(dev, _rel(np.real(x.conj() @ H @ x), xr @ S @ xr))
    return OracleResult("Hermitian real embedding", dev, draws)


def oracle_surrogate(rng, draws=1000, full=False):
    """Tangency and global lower bound of the signal-power surrogate at M = N = 2."""
    M = N = 2
    tang = 0.0
    lower = 0.0
    reduce = 0.0
    for _ in range(draws):
        hD, H = _crandn(rng, M), _crandn(rng, N, M)
        w_n, th_n = _crandn(rng, M), np.exp(2j * np.pi * rng.random(N))
        s = build_surrogate(hD, H, w_n, th_n, w_n, th_n, full)
        true0 = true_signal_power(hD, H, w_n, th_n)
        tang = max(tang, _rel(s.value(np.zeros((N, M))), true0))
        # expansion in w, then in theta, at fresh points with random errors
        w, th = _crandn(rng, M), np.exp(2j * np.pi * rng.random(N))
        dH, dh = _crandn(rng, N, M), (_crandn(rng, M) if full else None)
        sw = build_surrogate(hD, H, w, th_n, w_n, th_n, full)
        st = build_surrogate(hD, H, w_n, th, w_n, th_n, full)
        pw = true_signal_power(hD, H, w, th_n, dH, dh)
        pt = true_signal_power(hD, H, w_n, th, dH, dh)
        for sv, tv in ((sw.value(dH, dh), pw), (st.value(dH, dh), pt)):
            lower = max(lower, (sv - tv) / max(1.0, abs(tv)))
        if full:
            sp = build_surrogate(hD, H, w, th_n, w_n, th_n, False)
            reduce = max(reduce, _rel(sw.value(dH, None), sp.value(dH)))
    tag = "full" if full else "cascaded"
    out = [OracleResult(f"surrogate tangency ({tag})", tang, draws),
           OracleResult(f"surrogate lower bound ({tag})", max(lower, 0.0), draws)]
    if full:
        out.append(OracleResult("full surrogate reduces to cascaded", reduce, draws))
    return out


def oracle_rank_one(rng, draws=100, M=4, rank=3):
    """Rank-one construction: trace, useful power and cross-interference bounds."""
    dtr = dpow = dint = 0.0
    for _ in range(draws):
        F = _crandn(rng, M, rank)
        Psi = F @ F.conj().T
        h, g = _crandn(rng, M), _crandn(rng, M)
        Pt, _ = rank_one_project(Psi, h)
        scale = max(1.0, np.real(np.trace(Psi)))
        dtr = max(dtr, (np.real(np.trace(Pt)) - np.real(np.trace(Psi))) / scale)
        dpow = max(dpow, _rel(np.real(h.conj() @ Pt @ h), np.real(h.conj() @ Psi @ h)))
        dint = max(dint, (np.real(g.conj() @ Pt @ g) - np.real(g.conj() @ Psi @ g))
                   / max(1.0, np.real(g.conj() @ Psi @ g)))
    return [OracleResult("rank-one trace non-increase", max(dtr, 0.0), draws),
            OracleResult("rank-one useful power", dpow, draws),
            OracleResult("rank-one interference non-increase", max(dint, 0.0), draws)]


def oracle_suite(seed=0, draws=100, surrogate_draws=1000):
    rng = np.random.default_rng(seed)
    res = [oracle_trace_identity(rng, draws), oracle_bti_pcu(rng, draws),
           oracle_bti_fcu(rng, draws), oracle_schur(rng, draws),
           oracle_hermitian_embedding(rng, draws)]
    res += oracle_surrogate(rng, surrogate_draws, full=False)
    res += oracle_surrogate(rng, surrogate_draws, full=True)
    res += oracle_rank_one(rng, draws)
    return res


def oracle_report_csv(results):
    lines = ["oracle,max_deviation,draws,passed"]
    for r in results:
        lines.append(f"{r.name},{r.max_deviation!r},{r.draws},{int(r.passed)}")
    return "\n".join(lines) + "\n"


# soundness harnesses ----------------------------------------------------------

def _ball_points(rng, n, radius, count, boundary_fraction=0.7):
    z = _crandn(rng, count, n)
    z /= np.linalg.norm(z, axis=1, keepdims=True)
    r = np.full(count, radius)
    nb = int(round(boundary_fraction * count))
    r[nb:] = radius * rng.random(count - nb) ** (1.0 / (2 * n))
    return z * r[:, None]


def s_procedure_soundness(rng, instances=20, samples=10_000, n=4):
    """Worst sampled violation of certified ball-quadratic constraints."""
    worst = -math.inf
    for _ in range(instances):
        X = _crandn(rng, n, n)
        E0 = 0.5 * (X + X.conj().T)
        e0 = _crandn(rng, n)
        xi = float(rng.uniform(0.2, 1.5))
        prog = ConicProgram("s-proc")
        g = prog.var("g")
        block, _ = s_procedure_lmi(prog, E0, e0, g.expr(), xi)
        prog.add_psd(block)
        prog.minimize(g)
        rep = prog.solve()
        if not rep.ok:
            raise RuntimeError("soundness instance failed to solve")
        g0 = rep.values["g"].item()
        x = _ball_points(rng, n, xi, samples)
        f = np.real(np.einsum("ti,ij,tj->t", x.conj(), E0, x)) + 2 * np.real(x @ e0.conj()) + g0
        scale = max(1.0, abs(g0))
        worst = max(worst, float(np.max(-f)) / scale)
    return worst


def sign_definiteness_soundness(rng, instances=20, samples=10_000, n=3, p=3, m=2):
    """Worst sampled violation of certified robust matrix inequalities."""
    worst = -math.inf
    for inst in range(instances):
        X = _crandn(rng, n, n)
        E = 0.5 * (X + X.conj().T)
        P = 1 + inst % 2
        Ys = [_crandn(rng, p, n) for _ in range(P)]
        Zs = [_crandn(rng, m, n) for _ in range(P)]
        zetas = [float(rng.uniform(0.1, 1.0)) for _ in range(P)]
        prog = ConicProgram("sign-def")
        t = prog.var("t")
        Et = t.expr() * np.eye(n) + E
        block, _ = sign_definiteness_lmi(prog, Et, Ys, [Z.conj().T @ Z for Z in Zs], zetas)
        prog.add_psd(block)
        prog.minimize(t)
        rep = prog.solve()
        if not rep.ok:
            raise RuntimeError("soundness instance failed to solve")
        Ec = E + rep.values["t"].item() * np.eye(n)
        scale = max(1.0, np.abs(Ec).max())
        pert = np.zeros((samples, n, n), dtype=complex)
        for Y, Z, zeta in zip(Ys, Zs, zetas):
            Xs = _ball_points(rng, p * m, zeta, samples).reshape(samples, p, m)
            T = np.einsum("ij,tjk,kl->til", Y.conj().T, Xs, Z)
            pert += T + np.conj(np.transpose(T, (0, 2, 1)))
        lam = np.linalg.eigvalsh(Ec[None] - pert)[:, 0]
        worst = max(worst, float(np.max(-lam)) / scale)
    return worst


def bti_soundness(rng, instances=20, n=20, draws=100_000, epsilon=0.05, chunk=20_000):
    """Smallest empirical success probability over synthetic BTI-tight instances."""
    L = math.log(1.0 / epsilon)
    probs = []
    for _ in range(instances):
        X = _crandn(rng, n, n)
        Q = 0.5 * (X + X.conj().T)
        q = _crandn(rng, n)
        x = math.sqrt(np.linalg.norm(Q) ** 2 + 2 * np.linalg.norm(q) ** 2)
        y = max(-np.linalg.eigvalsh(Q)[0], 0.0)
        q0 = -np.real(np.trace(Q)) + math.sqrt(2 * L) * x + L * y
        ok = 0
        done = 0
        while done < draws:
            t = min(chunk, draws - done)
            u = _crandn(rng, t, n)
            f = np.real(np.einsum("ti,ij,tj->t", u.conj(), Q, u)) + 2 * np.real(u @ q.conj()) + q0
            ok += int(np.sum(f >= 0))
            done += t
        probs.append(ok / draws)
    return float(min(probs)), probs


__all__ = ["rate", "empirical_outage", "worst_case_margin", "wilson_interval", "ValidationReport",
           "validate_solution", "baseline_nonrobust", "quantize_phases", "oracle_suite",
           "OracleResult", "oracle_report_csv", "s_procedure_soundness",
           "sign_definiteness_soundness", "bti_soundness", "project_unit", "FCU", "PCU"]
