"""Network topology, requirements, channel model and random instance generation.

Arrays are 0-based internally.  The ``*_indices`` helpers on
:class:`NetworkTopology` return the 1-based index sets used when reporting
constraint identifiers.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

# Channel classes in generation order.  The draw order is part of the
# determinism contract: changing it changes every seeded instance.
LINK_CLASSES = ("h_P", "f_S", "q_P", "h_S", "g_Em", "f_Em", "q_El", "g_El")

DEFAULT_VARIANCES = {
    "h_P": 2.0,
    "f_S": 0.5,
    "q_P": 0.5,
    "h_S": 2.0,
    "g_Em": 1.5,
    "f_Em": 0.5,
    "q_El": 0.5,
    "g_El": 1.5,
}


class ValidationError(ValueError):
    """Raised for malformed topologies, parameters or channel sets."""


def dbm_to_watt(dbm):
    return 10.0 ** ((np.asarray(dbm, dtype=float) - 30.0) / 10.0)


def watt_to_dbm(watt):
    return 10.0 * np.log10(np.asarray(watt, dtype=float)) + 30.0


def mw_to_watt(mw):
    return np.asarray(mw, dtype=float) * 1e-3


@dataclass(frozen=True)
class NetworkTopology:
    M: int
    pu_counts: tuple[int, ...]
    ehr_counts_primary: tuple[int, ...]
    Ns: int
    Ks: int
    pbs_antennas: int
    cbs_antennas: int

    def __post_init__(self):
        object.__setattr__(self, "pu_counts", tuple(int(c) for c in self.pu_counts))
        object.__setattr__(self, "ehr_counts_primary", tuple(int(c) for c in self.ehr_counts_primary))
        counts = (self.M, self.Ns, self.Ks, self.pbs_antennas, self.cbs_antennas)
        if min(counts) < 1:
            raise ValidationError(f"all counts must be >= 1, got {counts}")
        if len(self.pu_counts) != self.M or len(self.ehr_counts_primary) != self.M:
            raise ValidationError("pu_counts and ehr_counts_primary must have length M")
        if min(self.pu_counts) < 1 or min(self.ehr_counts_primary) < 1:
            raise ValidationError("every cluster needs at least one PU and one EHR")

    @classmethod
    def table2(cls, Ks: int = 2) -> "NetworkTopology":
        """Default simulation topology: 2 clusters of one PU and one EHR, 3 SUs."""
        return cls(M=2, pu_counts=(1, 1), ehr_counts_primary=(1, 1), Ns=3, Ks=Ks,
                   pbs_antennas=10, cbs_antennas=5)

    @property
    def clusters(self) -> range:
        return range(1, self.M + 1)

    def pu_indices(self, m: int) -> range:
        return range(1, self.pu_counts[m - 1] + 1)

    def ehr_indices(self, m: int) -> range:
        return range(1, self.ehr_counts_primary[m - 1] + 1)

    @property
    def su_indices(self) -> range:
        return range(1, self.Ns + 1)

    @property
    def secondary_ehr_indices(self) -> range:
        return range(1, self.Ks + 1)

    @property
    def pu_pairs(self) -> list[tuple[int, int]]:
        """0-based (m, i) pairs in cluster-major order."""
        return [(m, i) for m in range(self.M) for i in range(self.pu_counts[m])]

    @property
    def primary_ehr_pairs(self) -> list[tuple[int, int]]:
        return [(m, k) for m in range(self.M) for k in range(self.ehr_counts_primary[m])]


@dataclass(frozen=True)
class EhCircuitParams:
    """Sigmoid energy-harvesting circuit: steepness ``a`` (1/W), midpoint ``b`` (W), saturation ``p_max`` (W)."""

    a: float = 1500.0
    b: float = 0.0022
    p_max: float = 0.024

    def __post_init__(self):
        if not (self.a > 0 and self.b > 0 and self.p_max > 0):
            raise ValidationError(f"EH parameters must be positive, got {self}")

    @property
    def Psi(self) -> float:
        """Sigmoid value at zero input, 1 / (1 + exp(a b))."""
        return float(_expit(-self.a * self.b))


def _expit(x):
    from scipy.special import expit

    return expit(x)


@dataclass(frozen=True)
class EhParams:
    """Circuit parameters per energy receiver.  ``primary[m][k]`` and ``secondary[l]``."""

    primary: tuple[tuple[EhCircuitParams, ...], ...]
    secondary: tuple[EhCircuitParams, ...]

    @classmethod
    def shared(cls, topology: NetworkTopology, circuit: EhCircuitParams | None = None) -> "EhParams":
        circuit = circuit or EhCircuitParams()
        return cls(
            primary=tuple(tuple(circuit for _ in range(K)) for K in topology.ehr_counts_primary),
            secondary=tuple(circuit for _ in range(topology.Ks)),
        )


@dataclass(frozen=True)
class QosRequirements:
    """Secrecy-rate (bits/s/Hz), interference (W) and harvested-power (W) requirements."""

    gamma_P: tuple[tuple[float, ...], ...]
    gamma_S: tuple[float, ...]
    upsilon: tuple[tuple[float, ...], ...]
    zeta_A1: float
    zeta_A2: float

    @classmethod
    def uniform(cls, topology: NetworkTopology, gamma_P=2.0, gamma_S=1.0, upsilon=10e-3,
                zeta_A1=15e-3, zeta_A2=5e-3) -> "QosRequirements":
        return cls(
            gamma_P=tuple(tuple(float(gamma_P) for _ in range(n)) for n in topology.pu_counts),
            gamma_S=tuple(float(gamma_S) for _ in range(topology.Ns)),
            upsilon=tuple(tuple(float(upsilon) for _ in range(n)) for n in topology.pu_counts),
            zeta_A1=float(zeta_A1),
            zeta_A2=float(zeta_A2),
        )

    def validate(self, topology: NetworkTopology, eh: EhParams | None = None):
        rates = [g for row in self.gamma_P for g in row] + list(self.gamma_S)
        if min(rates) < 0:
            raise ValidationError("secrecy-rate requirements must be >= 0")
        if [len(r) for r in self.gamma_P] != list(topology.pu_counts):
            raise ValidationError("gamma_P shape does not match topology")
        if [len(r) for r in self.upsilon] != list(topology.pu_counts):
            raise ValidationError("upsilon shape does not match topology")
        if len(self.gamma_S) != topology.Ns:
            raise ValidationError("gamma_S length does not match Ns")
        if min(u for row in self.upsilon for u in row) < 0:
            raise ValidationError("interference limits must be >= 0")
        if self.zeta_A1 < 0 or self.zeta_A2 < 0:
            raise ValidationError("harvested-power requirements must be >= 0")
        if eh is not None:
            if any(self.zeta_A1 >= c.p_max for row in eh.primary for c in row):
                raise ValidationError("zeta_A1 must be below the primary EHR saturation power")
            if any(self.zeta_A2 >= c.p_max for c in eh.secondary):
                raise ValidationError("zeta_A2 must be below the secondary EHR saturation power")


@dataclass(frozen=True)
class ChannelSet:
    """Complex channel vectors (rows) and noise variances in watts.

    ``h_P[m]`` has shape (N_{P,m}, N_{P,t}); ``q_P`` and ``h_S`` have one row
    per SU, already sorted so that ``norm(h_S[j])`` is nondecreasing.
    """

    topology: NetworkTopology
    h_P: tuple[np.ndarray, ...]
    f_S: tuple[np.ndarray, ...]
    q_P: np.ndarray
    h_S: np.ndarray
    g_Em: tuple[np.ndarray, ...]
    f_Em: tuple[np.ndarray, ...]
    q_El: np.ndarray
    g_El: np.ndarray
    sigma2_P: tuple[np.ndarray, ...]
    sigma2_S: np.ndarray
    sigma2_Em: tuple[np.ndarray, ...]
    sigma2_El: np.ndarray
    su_permutation: tuple[int, ...] = ()

    def __post_init__(self):
        t = self.topology
        nP, nS = t.pbs_antennas, t.cbs_antennas
        shapes = []
        for m in range(t.M):
            shapes += [(self.h_P[m], (t.pu_counts[m], nP)), (self.f_S[m], (t.pu_counts[m], nS)),
                       (self.g_Em[m], (t.ehr_counts_primary[m], nP)),
                       (self.f_Em[m], (t.ehr_counts_primary[m], nS)),
                       (self.sigma2_P[m], (t.pu_counts[m],)),
                       (self.sigma2_Em[m], (t.ehr_counts_primary[m],))]
        shapes += [(self.q_P, (t.Ns, nP)), (self.h_S, (t.Ns, nS)), (self.q_El, (t.Ks, nP)),
                   (self.g_El, (t.Ks, nS)), (self.sigma2_S, (t.Ns,)), (self.sigma2_El, (t.Ks,))]
        for arr, shape in shapes:
            if np.shape(arr) != shape:
                raise ValidationError(f"channel array shape {np.shape(arr)} != expected {shape}")
        noise = np.concatenate([*self.sigma2_P, self.sigma2_S, *self.sigma2_Em, self.sigma2_El])
        if not np.all(noise > 0):
            raise ValidationError("noise variances must be > 0")
        norms = np.linalg.norm(self.h_S, axis=1)
        if np.any(np.diff(norms) < 0):
            raise ValidationError("SUs must be ordered by nondecreasing ||h_S||")

    def with_noise(self, pu=None, su=None, ehr=None) -> "ChannelSet":
        """Copy with every noise variance of a class replaced by a scalar (W)."""
        t = self.topology
        kw = {}
        if pu is not None:
            kw["sigma2_P"] = tuple(np.full(n, float(pu)) for n in t.pu_counts)
        if su is not None:
            kw["sigma2_S"] = np.full(t.Ns, float(su))
        if ehr is not None:
            kw["sigma2_Em"] = tuple(np.full(k, float(ehr)) for k in t.ehr_counts_primary)
            kw["sigma2_El"] = np.full(t.Ks, float(ehr))
        return replace(self, **kw)


def sort_secondary_users(h_S: np.ndarray, q_P: np.ndarray, sigma2_S: np.ndarray):
    """Relabel SUs in ascending ``||h_S||``; returns the permuted arrays and the permutation."""
    order = np.argsort(np.linalg.norm(h_S, axis=1), kind="stable")
    return h_S[order], q_P[order], sigma2_S[order], tuple(int(i) for i in order)


def _cn(rng: np.random.Generator, shape, variance: float) -> np.ndarray:
    scale = np.sqrt(variance / 2.0)
    return scale * rng.standard_normal(shape) + 1j * scale * rng.standard_normal(shape)


def generate_channels(rng_seed, topology: NetworkTopology, variances: dict | None = None,
                      noise: dict | float = 1e-15) -> ChannelSet:
    """Draw one Rayleigh flat-fading instance.

    ``variances`` maps each of the eight link classes to the per-entry variance
    of its CN(0, v I) distribution.  ``noise`` is either one variance in watts
    for every receiver or a map with keys ``pu``, ``su``, ``ehr``.
    """
    var = dict(DEFAULT_VARIANCES)
    if variances:
        unknown = set(variances) - set(LINK_CLASSES)
        if unknown:
            raise ValidationError(f"unknown link classes: {sorted(unknown)}")
        var.update(variances)
    for name, v in var.items():
        if not v > 0:
            raise ValidationError(f"variance of {name} must be > 0, got {v}")
    if isinstance(noise, dict):
        n_pu, n_su, n_ehr = (float(noise[k]) for k in ("pu", "su", "ehr"))
    else:
        n_pu = n_su = n_ehr = float(noise)

    t = topology
    nP, nS = t.pbs_antennas, t.cbs_antennas
    rng = np.random.default_rng(rng_seed)
    h_P = tuple(_cn(rng, (n, nP), var["h_P"]) for n in t.pu_counts)
    f_S = tuple(_cn(rng, (n, nS), var["f_S"]) for n in t.pu_counts)
    q_P = _cn(rng, (t.Ns, nP), var["q_P"])
    h_S = _cn(rng, (t.Ns, nS), var["h_S"])
    g_Em = tuple(_cn(rng, (k, nP), var["g_Em"]) for k in t.ehr_counts_primary)
    f_Em = tuple(_cn(rng, (k, nS), var["f_Em"]) for k in t.ehr_counts_primary)
    q_El = _cn(rng, (t.Ks, nP), var["q_El"])
    g_El = _cn(rng, (t.Ks, nS), var["g_El"])

    sigma2_S = np.full(t.Ns, n_su)
    h_S, q_P, sigma2_S, perm = sort_secondary_users(h_S, q_P, sigma2_S)
    return ChannelSet(
        topology=t, h_P=h_P, f_S=f_S, q_P=q_P, h_S=h_S, g_Em=g_Em, f_Em=f_Em, q_El=q_El, g_El=g_El,
        sigma2_P=tuple(np.full(n, n_pu) for n in t.pu_counts),
        sigma2_S=sigma2_S,
        sigma2_Em=tuple(np.full(k, n_ehr) for k in t.ehr_counts_primary),
        sigma2_El=np.full(t.Ks, n_ehr),
        su_permutation=perm,
    )


def outer(v: np.ndarray) -> np.ndarray:
    """Rank-one Hermitian matrix v v^H."""
    v = np.asarray(v)
    return np.outer(v, v.conj())


@dataclass(frozen=True)
class OuterProducts:
    """The H = h h^H matrices of every link, same nesting as :class:`ChannelSet`."""

    H_P: tuple[tuple[np.ndarray, ...], ...]
    F_S: tuple[tuple[np.ndarray, ...], ...]
    Q_P: tuple[np.ndarray, ...]
    H_S: tuple[np.ndarray, ...]
    G_Em: tuple[tuple[np.ndarray, ...], ...]
    F_Em: tuple[tuple[np.ndarray, ...], ...]
    Q_El: tuple[np.ndarray, ...]
    G_El: tuple[np.ndarray, ...]

    def all_matrices(self):
        for name in ("H_P", "F_S", "G_Em", "F_Em"):
            for row in getattr(self, name):
                yield from row
        for name in ("Q_P", "H_S", "Q_El", "G_El"):
            yield from getattr(self, name)


def outer_product_cache(channels: ChannelSet) -> OuterProducts:
    nested = lambda vs: tuple(tuple(outer(v) for v in block) for block in vs)  # noqa: E731
    flat = lambda block: tuple(outer(v) for v in block)  # noqa: E731
    return OuterProducts(
        H_P=nested(channels.h_P), F_S=nested(channels.f_S),
        Q_P=flat(channels.q_P), H_S=flat(channels.h_S),
        G_Em=nested(channels.g_Em), F_Em=nested(channels.f_Em),
        Q_El=flat(channels.q_El), G_El=flat(channels.g_El),
    )


def _check_psd(name: str, A: np.ndarray, n: int):
    if A.shape != (n, n):
        raise ValidationError(f"{name} has shape {A.shape}, expected {(n, n)}")
    if not np.allclose(A, A.conj().T, atol=1e-12 * max(1.0, np.abs(A).max())):
        raise ValidationError(f"{name} is not Hermitian")
    tr = max(float(np.real(np.trace(A))), 0.0)
    if np.linalg.eigvalsh(A).min() < -1e-9 * tr - 1e-300:
        raise ValidationError(f"{name} is not positive semidefinite")


@dataclass
class CovarianceSolution:
    """Information-beam and artificial-noise covariances (watts)."""

    W_p: list[np.ndarray]
    Sigma_p: list[np.ndarray]
    W_s: list[np.ndarray]
    Sigma_s: np.ndarray
    meta: dict = field(default_factory=dict)

    @classmethod
    def zeros(cls, topology: NetworkTopology) -> "CovarianceSolution":
        nP, nS = topology.pbs_antennas, topology.cbs_antennas
        z = lambda n: np.zeros((n, n), dtype=complex)  # noqa: E731
        return cls([z(nP) for _ in range(topology.M)], [z(nP) for _ in range(topology.M)],
                   [z(nS) for _ in range(topology.Ns)], z(nS))

    def matrices(self):
        yield from self.W_p
        yield from self.Sigma_p
        yield from self.W_s
        yield self.Sigma_s

    def validate(self, topology: NetworkTopology):
        nP, nS = topology.pbs_antennas, topology.cbs_antennas
        if len(self.W_p) != topology.M or len(self.Sigma_p) != topology.M or len(self.W_s) != topology.Ns:
            raise ValidationError("covariance counts do not match topology")
        for m in range(topology.M):
            _check_psd(f"W_p[{m}]", self.W_p[m], nP)
            _check_psd(f"Sigma_p[{m}]", self.Sigma_p[m], nP)
        for j in range(topology.Ns):
            _check_psd(f"W_s[{j}]", self.W_s[j], nS)
        _check_psd("Sigma_s", self.Sigma_s, nS)

    def scaled(self, factor: float) -> "CovarianceSolution":
        return CovarianceSolution([factor * A for A in self.W_p], [factor * A for A in self.Sigma_p],
                                  [factor * A for A in self.W_s], factor * self.Sigma_s)

    def __add__(self, other: "CovarianceSolution") -> "CovarianceSolution":
        return CovarianceSolution([a + b for a, b in zip(self.W_p, other.W_p)],
                                  [a + b for a, b in zip(self.Sigma_p, other.Sigma_p)],
                                  [a + b for a, b in zip(self.W_s, other.W_s)],
                                  self.Sigma_s + other.Sigma_s)


def project_psd(A: np.ndarray) -> np.ndarray:
    """Nearest Hermitian PSD matrix in Frobenius norm."""
    A = 0.5 * (A + A.conj().T)
    vals, vecs = np.linalg.eigh(A)
    vals = np.clip(vals, 0.0, None)
    out = (vecs * vals) @ vecs.conj().T
    return 0.5 * (out + out.conj().T)
