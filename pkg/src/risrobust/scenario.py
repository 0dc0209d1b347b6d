"""Rician channel model for a roadside RIS serving users on a train.

All powers are linear Watts unless a name says ``_db``/``_dbm``.  Channel
vectors follow the convention that user k receives ``(h_D^H + theta^H H) w``
with the cascaded matrix ``H = diag(conj(h_R)) G``.
"""

from dataclasses import dataclass, field, fields, asdict
import math

import numpy as np

SPEED_OF_LIGHT = 299792458.0


@dataclass
class SystemConfig:
    M_h: int = 2
    M_v: int = 2
    N_h: int = 2
    N_v: int = 2
    K: int = 2
    f_c: float = 200e6           # Hz
    v: float = 100.0             # m/s
    tau: float = 1e-3            # s
    kappa_db: float = 3.0        # dB
    PL0_db: float = -30.0        # dB at d0
    d0: float = 1.0              # m
    beta_D: float = 3.7
    beta_G: float = 3.0
    beta_R: float = 2.0
    sigma2_dbm: float = None     # dBm, None -> computed from B
    B: float = 200e6             # Hz
    R_th: float = 3.0            # bit/s/Hz
    bs_pos: tuple = (0.0, 0.0, 10.0)
    ris_pos: tuple = (50.0, 5.0, 10.0)
    user_pos: tuple = None       # K x 3, None -> evenly spaced on the track
    track_start: float = 0.0     # m, track segment along x at y=0, z=2
    track_length: float = 100.0  # m
    element_spacing_ratio: float = 0.5

    def __post_init__(self):
        for name in ("M_h", "M_v", "N_h", "N_v", "K"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be >= 1")
            setattr(self, name, int(getattr(self, name)))
        if self.f_c <= 0 or self.d0 <= 0 or self.B <= 0:
            raise ValueError("f_c, d0 and B must be positive")
        self.bs_pos = tuple(float(x) for x in self.bs_pos)
        self.ris_pos = tuple(float(x) for x in self.ris_pos)
        if self.user_pos is None:
            xs = self.track_start + self.track_length * (np.arange(self.K) + 0.5) / self.K
            self.user_pos = tuple((float(x), 0.0, 2.0) for x in xs)
        else:
            self.user_pos = tuple(tuple(float(c) for c in p) for p in self.user_pos)
            if len(self.user_pos) != self.K:
                raise ValueError("user_pos needs one coordinate triple per user")
        if self.sigma2_dbm is None:
            self.sigma2_dbm = noise_power_dbm(self.B)
        pts = [self.bs_pos, self.ris_pos] + list(self.user_pos)
        for i in range(len(pts)):
            for j in range(i + 1, len(pts)):
                if np.linalg.norm(np.subtract(pts[i], pts[j])) <= 0:
                    raise ValueError("all node positions must be distinct")

    @property
    def M(self):
        return self.M_h * self.M_v

    @property
    def N(self):
        return self.N_h * self.N_v

    @property
    def kappa(self):
        return 10.0 ** (self.kappa_db / 10.0)

    @property
    def wavelength(self):
        return SPEED_OF_LIGHT / self.f_c

    @property
    def sigma2(self):
        """Noise power in W."""
        return 10.0 ** ((self.sigma2_dbm - 30.0) / 10.0)

    def replace(self, **kw):
        d = asdict(self)
        # sizes or K changing invalidate derived defaults
        if "K" in kw and "user_pos" not in kw:
            d["user_pos"] = None
        if "B" in kw and "sigma2_dbm" not in kw:
            d["sigma2_dbm"] = None
        d.update(kw)
        return SystemConfig(**d)


@dataclass
class AngleSet:
    """Azimuth/elevation pairs (rad) for each link."""
    bs_to_user: np.ndarray    # K x 2, departure at BS
    bs_to_ris: np.ndarray     # 2, departure at BS
    ris_from_bs: np.ndarray   # 2, arrival at RIS
    ris_to_user: np.ndarray   # K x 2, departure at RIS
    user_from_bs: np.ndarray  # K x 2, arrival at user (Doppler)
    user_from_ris: np.ndarray  # K x 2


@dataclass
class ChannelSet:
    hD: np.ndarray   # K x M
    G: np.ndarray    # N x M
    hR: np.ndarray   # K x N
    H: np.ndarray    # K x N x M

    @property
    def K(self):
        return self.hD.shape[0]

    @property
    def M(self):
        return self.hD.shape[1]

    @property
    def N(self):
        return self.G.shape[0]

    def scaled(self, s):
        return ChannelSet(self.hD * s, self.G * s, self.hR.copy(), self.H * s)

    def effective(self, theta):
        """Per-user effective channel a_k = h_D,k + H_k^H theta (K x M)."""
        return self.hD + np.einsum("knm,n->km", self.H.conj(), theta)


def steering_vector(phi, delta, n_h, n_v, spacing_ratio=0.5):
    """URA response: kron of horizontal and vertical phase progressions."""
    if n_h < 1 or n_v < 1:
        raise ValueError("array dimensions must be >= 1")
    k = 2.0 * np.pi * spacing_ratio
    a_h = np.exp(1j * k * np.arange(n_h) * np.sin(phi) * np.cos(delta))
    a_v = np.exp(1j * k * np.arange(n_v) * np.sin(phi) * np.sin(delta))
    return np.kron(a_h, a_v)


def path_loss_db(PL0_db, beta, d0, d):
    if d <= 0 or d0 <= 0:
        raise ValueError("distances must be positive")
    # gain falls with distance: -50 dB at 10 m for PL0=-30 dB, beta=2
    return PL0_db - 10.0 * beta * math.log10(d / d0)


def doppler_shift(v, phi, delta, lambda_c):
    if lambda_c <= 0:
        raise ValueError("wavelength must be positive")
    return v * math.cos(phi) * math.cos(delta) / lambda_c


def noise_power_dbm(B):
    if B <= 0:
        raise ValueError("bandwidth must be positive")
    return -174.0 + 10.0 * math.log10(B) + 10.0


def cascade(h_R, G):
    h_R = np.asarray(h_R)
    G = np.asarray(G)
    if h_R.ndim != 1 or G.ndim != 2 or G.shape[0] != h_R.shape[0]:
        raise ValueError("cascade needs h_R of length N and G of shape N x M")
    return h_R.conj()[:, None] * G


def _angles(src, dst):
    d = np.subtract(dst, src)
    r = np.linalg.norm(d)
    az = math.atan2(d[1], d[0])
    if az == -math.pi:
        az = math.pi
    el = math.asin(max(-1.0, min(1.0, d[2] / r)))
    return np.array([az, el]), r


def link_angles(config):
    bs, ris = config.bs_pos, config.ris_pos
    users = config.user_pos
    return AngleSet(
        bs_to_user=np.array([_angles(bs, u)[0] for u in users]),
        bs_to_ris=_angles(bs, ris)[0],
        ris_from_bs=_angles(ris, bs)[0],
        ris_to_user=np.array([_angles(ris, u)[0] for u in users]),
        user_from_bs=np.array([_angles(u, bs)[0] for u in users]),
        user_from_ris=np.array([_angles(u, ris)[0] for u in users]),
    )


def cscg(rng, shape):
    """Unit-variance circularly symmetric complex Gaussian samples."""
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) * np.sqrt(0.5)


def generate_channels(config, rng):
    """One Rician realization of every link.

    Each link draws from its own substream of ``rng``, and RIS-side draws
    are laid out element by element.  With N_v fixed, growing N_h only
    appends RIS elements: the smaller surface is a sub-array of the larger
    one under the same seed, and the direct links never depend on N.
    """
    c = config
    M, N, K = c.M, c.N, c.K
    kap = c.kappa
    w_los = math.sqrt(kap / (kap + 1.0))
    w_nlos = math.sqrt(1.0 / (kap + 1.0))
    lam = c.wavelength
    ang = link_angles(c)
    sr = c.element_spacing_ratio

    sD, sG, sR = (np.random.default_rng(int(x)) for x in rng.integers(0, 2 ** 63, size=3))
    nlos_D = cscg(sD, (K, M))
    nlos_G = cscg(sG, (N, M))
    nlos_R = cscg(sR, (N, K)).T

    hD = np.zeros((K, M), dtype=complex)
    hR = np.zeros((K, N), dtype=complex)
    for k, u in enumerate(c.user_pos):
        d_D = np.linalg.norm(np.subtract(u, c.bs_pos))
        pl = 10.0 ** (path_loss_db(c.PL0_db, c.beta_D, c.d0, d_D) / 10.0)
        fd = doppler_shift(c.v, *ang.user_from_bs[k], lam)
        los = np.exp(2j * np.pi * fd * c.tau) * steering_vector(*ang.bs_to_user[k], c.M_h, c.M_v, sr)
        hD[k] = math.sqrt(pl) * (w_los * los + w_nlos * nlos_D[k])

        d_R = np.linalg.norm(np.subtract(u, c.ris_pos))
        pl = 10.0 ** (path_loss_db(c.PL0_db, c.beta_R, c.d0, d_R) / 10.0)
        fd = doppler_shift(c.v, *ang.user_from_ris[k], lam)
        los = np.exp(2j * np.pi * fd * c.tau) * steering_vector(*ang.ris_to_user[k], c.N_h, c.N_v, sr)
        hR[k] = math.sqrt(pl) * (w_los * los + w_nlos * nlos_R[k])

    d_G = np.linalg.norm(np.subtract(c.ris_pos, c.bs_pos))
    pl = 10.0 ** (path_loss_db(c.PL0_db, c.beta_G, c.d0, d_G) / 10.0)
    a_R = steering_vector(*ang.ris_from_bs, c.N_h, c.N_v, sr)
    a_B = steering_vector(*ang.bs_to_ris, c.M_h, c.M_v, sr)
    G = math.sqrt(pl) * (w_los * np.outer(a_R, a_B.conj()) + w_nlos * nlos_G)

    H = np.stack([cascade(hR[k], G) for k in range(K)])
    return ChannelSet(hD, G, hR, H)


# text formats -----------------------------------------------------------

_LIST_KEYS = {"bs_pos", "ris_pos", "user_pos"}


def _fmt_value(v):
    if isinstance(v, tuple) and v and isinstance(v[0], tuple):
        return "; ".join(", ".join(repr(float(x)) for x in p) for p in v)
    if isinstance(v, tuple):
        return ", ".join(repr(float(x)) for x in v)
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


CONFIG_UNITS = {
    "M_h": "BS elements (horizontal)", "M_v": "BS elements (vertical)",
    "N_h": "RIS elements (horizontal)", "N_v": "RIS elements (vertical)",
    "K": "users", "f_c": "Hz", "v": "m/s", "tau": "s", "kappa_db": "dB",
    "PL0_db": "dB", "d0": "m", "beta_D": "-", "beta_G": "-", "beta_R": "-",
    "sigma2_dbm": "dBm", "B": "Hz", "R_th": "bit/s/Hz", "bs_pos": "m (x, y, z)",
    "ris_pos": "m (x, y, z)", "user_pos": "m (x, y, z; ...)", "track_start": "m",
    "track_length": "m", "element_spacing_ratio": "d / lambda",
}


def config_to_text(config, extra=None):
    lines = ["# system configuration (key = value)"]
    for f in fields(SystemConfig):
        lines.append(f"{f.name} = {_fmt_value(getattr(config, f.name))}  # {CONFIG_UNITS[f.name]}")
    for k, v in (extra or {}).items():
        lines.append(f"{k} = {_fmt_value(v)}")
    return "\n".join(lines) + "\n"


def parse_kv_text(text):
    """Parse ``key = value`` lines; '#' starts a comment."""
    out = {}
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"malformed config line: {raw!r}")
        k, v = (s.strip() for s in line.split("=", 1))
        out[k] = v
    return out


def _parse_scalar(s):
    s = s.strip()
    if s.lower() in ("none", ""):
        return None
    try:
        return int(s)
    except ValueError:
        return float(s)


def coerce_config_value(key, s):
    if key in _LIST_KEYS:
        if s.strip().lower() == "none":
            return None
        if ";" in s or key == "user_pos":
            return tuple(tuple(float(x) for x in p.split(",")) for p in s.split(";") if p.strip())
        return tuple(float(x) for x in s.split(","))
    return _parse_scalar(s)


def config_from_text(text):
    """Returns (SystemConfig, leftover keys) so callers can read experiment keys."""
    kv = parse_kv_text(text)
    names = {f.name for f in fields(SystemConfig)}
    args, rest = {}, {}
    for k, v in kv.items():
        if k in names:
            args[k] = coerce_config_value(k, v)
        else:
            rest[k] = v
    return SystemConfig(**args), rest


def load_config(path):
    with open(path) as fh:
        return config_from_text(fh.read())


def _array_to_lines(name, a):
    a = np.atleast_2d(np.asarray(a, dtype=complex))
    out = [f"@{name} {a.shape[0]} {a.shape[1]}"]
    for row in a:
        out.append(" ".join(f"{float(z.real)!r},{float(z.imag)!r}" for z in row))
    return out


def arrays_to_text(arrays, header="complex arrays"):
    """Documented text format: ``@name rows cols`` then rows of ``re,im``."""
    lines = [f"# {header}; complex entries as re,im; row-major"]
    for name, a in arrays.items():
        lines += _array_to_lines(name, a)
    return "\n".join(lines) + "\n"


def arrays_from_text(text):
    out = {}
    lines = [l for l in text.splitlines() if l.strip() and not l.startswith("#")]
    i = 0
    while i < len(lines):
        head = lines[i].split()
        if not head[0].startswith("@"):
            raise ValueError(f"expected array header, got {lines[i]!r}")
        name, r, c = head[0][1:], int(head[1]), int(head[2])
        rows = []
        for j in range(r):
            vals = lines[i + 1 + j].split()
            if len(vals) != c:
                raise ValueError(f"array {name}: row {j} has {len(vals)} entries, expected {c}")
            rows.append([complex(float(p.split(",")[0]), float(p.split(",")[1])) for p in vals])
        out[name] = np.array(rows, dtype=complex).reshape(r, c)
        i += 1 + r
    return out


def channels_to_text(ch):
    arrays = {"hD": ch.hD, "G": ch.G, "hR": ch.hR}
    for k in range(ch.K):
        arrays[f"H{k}"] = ch.H[k]
    return arrays_to_text(arrays, "channel set")


def channels_from_text(text):
    a = arrays_from_text(text)
    K = a["hD"].shape[0]
    H = np.stack([a[f"H{k}"] for k in range(K)])
    ch = ChannelSet(a["hD"], a["G"], a["hR"], H)
    ref = np.stack([cascade(ch.hR[k], ch.G) for k in range(K)])
    if not np.allclose(ref, H, rtol=1e-12, atol=1e-300):
        raise ValueError("cascaded channels inconsistent with G and h_R")
    return ch
