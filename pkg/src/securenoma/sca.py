"""Successive convex approximation over semidefinite-relaxed subproblems.

Every iteration solves a convex conic program in the Hermitian covariances
and a set of log-domain auxiliary variables.  The non-convex parts of the
secrecy constraints are replaced by their first-order surrogates

    y <= exp(x)   ~>   y <= exp(x~) (x - x~ + 1),

which are tight at the linearization point ``x~`` and conservative
elsewhere, so each solution is feasible for the original problem and the
objective sequence is nonincreasing.

Internally powers are expressed in ``settings.power_unit`` watts (1 mW by
default).  Linearized rows are divided by ``exp(x~)`` and exponential-cone
rows are shifted by a reference point, so every row handed to the conic
solver is O(1) regardless of the 1e-15 W noise floor.
"""
from __future__ import annotations

import enum
import logging
import warnings
from dataclasses import dataclass, field

import cvxpy as cp
import numpy as np

from .metrics import eh_rf_threshold, power_terms, secondary_ehr_rf, total_power
from .model import (ChannelSet, CovarianceSolution, EhParams, QosRequirements, outer,
                    project_psd)

log = logging.getLogger(__name__)

LN2 = np.log(2.0)


class Scheme(str, enum.Enum):
    NOMA_JAMMING = "noma-jamming"
    NOMA_NOJAM = "noma-nojam"
    OMA_TDMA = "oma-tdma"


class InitializationInfeasible(RuntimeError):
    pass


@dataclass(frozen=True)
class SolverSettings:
    tolerance: float = 1e-4          # W, stopping rule on consecutive objectives
    max_iterations: int = 50
    restart_limit: int = 3
    rank_tolerance: float = 1e-6
    backend: str = "CLARABEL"
    power_unit: float = 1e-3         # W per internal power unit
    rate_margin: float = 1e-5        # bits/s/Hz added to every secrecy target
    power_margin: float = 1e-6       # relative back-off on EH thresholds and interference caps
    randomization_trials: int = 1000
    accept_violation: float = 1e-6   # max scaled row residual tolerated on an inaccurate solve

    def __post_init__(self):
        if not self.tolerance > 0:
            raise ValueError("tolerance must be > 0")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.restart_limit < 0:
            raise ValueError("restart_limit must be >= 0")


# ---------------------------------------------------------------------------
# iterate


@dataclass
class ScaIterate:
    """Auxiliary-variable values defining the next linearization.

    ``slots[t]`` maps auxiliary names (``alpha_P``, ``beta``, ``mu_E``, ...)
    to arrays; log-domain entries are natural logs of powers in internal
    units.  Entries that do not exist (``alpha_sjz`` for z < j) are NaN.
    """

    slots: list[dict[str, np.ndarray]]
    solution: object = None

    def copy(self) -> "ScaIterate":
        return ScaIterate([{k: np.array(v, copy=True) for k, v in s.items()} for s in self.slots],
                          self.solution)

    def perturbed(self, eps: float = 1e-6) -> "ScaIterate":
        out = self.copy()
        for s in out.slots:
            for key in LINEARIZED:
                if key in s:
                    s[key] = s[key] + eps
        return out


# variables that enter through first-order surrogates
LINEARIZED = ("alpha_P", "beta", "mu_E", "alpha_sNs", "beta_sNs", "mu_El", "alpha_sjz", "xi_sj",
              "mu_Elj", "eh_P", "eh_S")


# ---------------------------------------------------------------------------
# slot layout


@dataclass(frozen=True)
class SlotLayout:
    """Which SUs a slot serves and the per-slot secrecy target scaling."""

    served: tuple[int, ...]
    rate_scale: float = 1.0


def slot_layouts(scheme: Scheme, Ns: int) -> list[SlotLayout]:
    if Scheme(scheme) is Scheme.OMA_TDMA:
        return [SlotLayout((j,), float(Ns)) for j in range(Ns)]
    return [SlotLayout(tuple(range(Ns)))]


def slot_solution(sol: CovarianceSolution, served) -> CovarianceSolution:
    """Zero the information covariances of SUs not served in a slot."""
    W_s = [A if j in served else np.zeros_like(A) for j, A in enumerate(sol.W_s)]
    return CovarianceSolution(list(sol.W_p), list(sol.Sigma_p), W_s, sol.Sigma_s)


@dataclass
class TdmaSolution:
    """Per-slot covariances of the time-division baseline; slot j serves SU j."""

    slots: list[CovarianceSolution]

    def matrices(self):
        for s in self.slots:
            yield from s.matrices()


def scheme_power(sol) -> float:
    if isinstance(sol, TdmaSolution):
        return float(np.mean([total_power(s) for s in sol.slots]))
    return total_power(sol)


# ---------------------------------------------------------------------------
# auxiliary values at a given covariance point


def aux_from_solution(channels: ChannelSet, sol: CovarianceSolution, layout: SlotLayout,
                      unit: float) -> dict[str, np.ndarray]:
    """Evaluate every auxiliary variable with its defining relation held with equality."""
    t = channels.topology
    terms = power_terms(channels, slot_solution(sol, layout.served))
    ln = lambda x: np.log(np.asarray(x, dtype=float) / unit)  # noqa: E731
    out: dict[str, np.ndarray] = {}

    pus = t.pu_pairs
    out["alpha_P"] = ln([terms.Gamma_P_int[m][i] for m, i in pus])
    out["lambda_P"] = ln([terms.Gamma_P[m][i] for m, i in pus])
    ehrs = t.primary_ehr_pairs
    num = np.array([terms.Gamma_E[m][k] + terms.sigma2_Em[m][k] for m, k in ehrs])
    den = np.array([terms.Gamma_E_int[m][k] + terms.sigma2_Em[m][k] for m, k in ehrs])
    out["mu_E"] = ln(num)
    out["rho_E"] = ln(den)
    ratio = num / den
    tau = np.array([max(ratio[e] for e, (mm, _) in enumerate(ehrs) if mm == m) for m in range(t.M)])
    out["beta"] = np.log(tau)
    out["delta"] = np.log(tau)

    served = layout.served
    last = served[-1]
    out["alpha_sNs"] = ln(terms.Gamma_S_int[last])
    out["lambda_sNs"] = ln(terms.Gamma_S[last])
    num = terms.Lambda_E[:, last]
    den = terms.Lambda_E_int[:, last]
    out["mu_El"] = ln(num)
    out["rho_sl"] = ln(den)
    tau_s = float(np.max(num / den))
    out["beta_sNs"] = np.array(np.log(tau_s))
    out["omega_sNs"] = np.array(np.log(tau_s))

    early = served[:-1]
    L = len(served)
    J = len(early)
    alpha = np.full((J, L), np.nan)
    lam = np.full((J, L), np.nan)
    xi = np.empty(J)
    for a, j in enumerate(early):
        for b in range(a, L):
            z = served[b]
            alpha[a, b] = ln(terms.Lambda_S_int[j, z])
            lam[a, b] = ln(terms.Lambda_S[j, z])
        xi[a] = np.log(np.min([terms.Lambda_S[j, served[b]] / terms.Lambda_S_int[j, served[b]]
                            for b in range(a, L)]))
    out["alpha_sjz"] = alpha
    out["lambda_sjz"] = lam
    out["xi_sj"] = xi
    Ks = t.Ks
    mu = np.empty((Ks, J))
    rho = np.empty((Ks, J))
    tau_S = np.empty(J)
    for a, j in enumerate(early):
        mu[:, a] = ln(terms.Lambda_sl[:, j])
        rho[:, a] = ln(terms.Lambda_sl_int[:, j])
        tau_S[a] = np.log(np.max(terms.Lambda_sl[:, j] / terms.Lambda_sl_int[:, j]))
    out["mu_Elj"] = mu
    out["rho_slj"] = rho
    out["tau_Sj"] = tau_S
    return out


# ---------------------------------------------------------------------------
# initialization


def _isotropic(n: int) -> np.ndarray:
    return np.eye(n, dtype=complex) / n


def _random_psd(rng: np.random.Generator, n: int) -> np.ndarray:
    G = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    A = G @ G.conj().T
    return A / np.real(np.trace(A))


def _shape_solution(channels: ChannelSet, layout: SlotLayout, scheme: Scheme, rng=None):
    """Unit-trace covariance shapes used by the doubling search."""
    t = channels.topology
    nP, nS = t.pbs_antennas, t.cbs_antennas
    make = (lambda n: _isotropic(n)) if rng is None else (lambda n: _random_psd(rng, n))
    W_p = [make(nP) for _ in range(t.M)]
    S_p = [make(nP) for _ in range(t.M)]
    W_s = [make(nS) if j in layout.served else np.zeros((nS, nS), complex) for j in range(t.Ns)]
    S_s = np.zeros((nS, nS), complex) if scheme is Scheme.NOMA_NOJAM else make(nS)
    return CovarianceSolution(W_p, S_p, W_s, S_s)


def _initial_power(channels, reqs, eh, shapes: list[CovarianceSolution], max_doublings=200) -> float:
    t = channels.topology
    thr_P = np.array([eh_rf_threshold(reqs.zeta_A1, eh.primary[m][k]) for m, k in t.primary_ehr_pairs])
    thr_S = np.array([eh_rf_threshold(reqs.zeta_A2, eh.secondary[l]) for l in range(t.Ks)])
    ups = np.array([reqs.upsilon[m][i] for m, i in t.pu_pairs])
    rf_P, rf_S, interf = [], [], []
    for s in shapes:
        terms = power_terms(channels, s)
        rf_P.append([terms.Gamma_E[m][k] for m, k in t.primary_ehr_pairs])
        rf_S.append(secondary_ehr_rf(terms))
        interf.append([terms.interference_P[m][i] for m, i in t.pu_pairs])
    rf_P, rf_S, interf = (np.array(x) for x in (rf_P, rf_S, interf))
    # start at the noise floor: the smallest EH-feasible scale is within a factor 2
    noise = np.concatenate([*channels.sigma2_P, channels.sigma2_S, *channels.sigma2_Em, channels.sigma2_El])
    p = float(noise.max())
    for _ in range(max_doublings):
        if np.any(p * interf > ups):
            break
        if np.all(p * rf_P >= thr_P) and np.all(p * rf_S >= thr_S):
            return p
        p *= 2.0
    raise InitializationInfeasible("no common power meets the interference cap and EH thresholds")


def initialize_iterate(channels: ChannelSet, reqs: QosRequirements, eh: EhParams, rng_seed=0,
                       scheme: Scheme = Scheme.NOMA_JAMMING, restart: int = 0,
                       settings: SolverSettings | None = None) -> ScaIterate:
    """Starting point: equal-trace covariances scaled by a doubling search from the noise floor.

    ``restart = 0`` uses isotropic covariances; later restarts draw random
    PSD shapes from ``(rng_seed, restart)``.
    """
    settings = settings or SolverSettings()
    scheme = Scheme(scheme)
    layouts = slot_layouts(scheme, channels.topology.Ns)
    rng = None if restart == 0 else np.random.default_rng([int(rng_seed), int(restart)])
    shapes = [_shape_solution(channels, lay, scheme, rng) for lay in layouts]
    p = _initial_power(channels, reqs, eh, shapes)
    sols = [s.scaled(p) for s in shapes]
    unit = settings.power_unit
    slots = []
    for lay, s in zip(layouts, sols):
        aux = aux_from_solution(channels, s, lay, unit)
        if len(layouts) > 1:
            # log headroom ln(pmax - h) with every slot starting at the target h = zeta
            aux["eh_P"] = np.array([np.log((eh.primary[m][k].p_max - reqs.zeta_A1) / unit)
                                    for m, k in channels.topology.primary_ehr_pairs])
            aux["eh_S"] = np.array([np.log((c.p_max - reqs.zeta_A2) / unit) for c in eh.secondary])
        slots.append(aux)
    solution = sols[0] if len(sols) == 1 else TdmaSolution(sols)
    return ScaIterate(slots, solution)


# ---------------------------------------------------------------------------
# subproblem


def _vec_rows(vectors: list[np.ndarray]) -> np.ndarray:
    """Rows r with r . vec_F(X) = Tr(X v v^H)."""
    return np.array([np.conj(outer(v)).flatten(order="F") for v in vectors])


@dataclass
class _SlotVars:
    layout: SlotLayout
    W_p: list
    S_p: list
    W_s: dict
    S_s: object
    aux: dict = field(default_factory=dict)


class ConvexSubproblem:
    """One convex surrogate of the power-minimization problem.

    Linearization points live in cvxpy parameters, so the same compiled
    program is reused across SCA iterations via :meth:`set_point`.
    """

    def __init__(self, channels: ChannelSet, reqs: QosRequirements, eh: EhParams,
                 scheme: Scheme = Scheme.NOMA_JAMMING, settings: SolverSettings | None = None):
        self.channels = channels
        self.reqs = reqs
        self.eh = eh
        self.scheme = Scheme(scheme)
        self.settings = settings or SolverSettings()
        self.layouts = slot_layouts(self.scheme, channels.topology.Ns)
        self.constraints: list = []
        self.tags: list[tuple[str, str]] = []   # (constraint tag, index label)
        self._setters: list = []
        self.slots: list[_SlotVars] = []
        self._build()

    # -- helpers -----------------------------------------------------------
    def _add(self, con, tag, label=""):
        self.constraints.append(con)
        self.tags.append((tag, label))

    def _lin_le(self, lhs, var, key, idx, slot, tag, label):
        """lhs <= exp(x~)(x - x~ + 1), divided through by exp(x~)."""
        s = cp.Parameter(nonneg=True)
        x0 = cp.Parameter()
        self._setters.append((slot, key, idx, "lin", s, x0))
        self._add(s * lhs - var + x0 - 1 <= 0, tag, label)

    def _exp_lin(self, var, shift, lin_var, key, idx, slot, tag, label):
        """exp(var + shift) <= exp(x~)(lin_var - x~ + 1), i.e. exp(var + shift - x~) <= lin_var - x~ + 1."""
        x0 = cp.Parameter()
        self._setters.append((slot, key, idx, "explin", x0))
        self._add(cp.exp(var + shift - x0) <= lin_var - x0 + 1, tag, label)

    def _exp_le(self, var, rhs, key, idx, slot, tag, label):
        """exp(x) <= rhs, shifted by a reference r: exp(x - r) <= exp(-r) rhs."""
        s = cp.Parameter(nonneg=True)
        r = cp.Parameter()
        self._setters.append((slot, key, idx, "exp", s, r))
        self._add(cp.exp(var - r) <= s * rhs, tag, label)

    # -- construction --------------------------------------------------------
    def _build(self):
        ch, t, unit = self.channels, self.channels.topology, self.settings.power_unit
        nP, nS = t.pbs_antennas, t.cbs_antennas
        pus, ehrs = t.pu_pairs, t.primary_ehr_pairs
        # receiver rows: PBS side then CBS side
        pbs_rx = ([ch.h_P[m][i] for m, i in pus] + [ch.g_Em[m][k] for m, k in ehrs]
                  + list(ch.q_P) + list(ch.q_El))
        cbs_rx = ([ch.f_S[m][i] for m, i in pus] + [ch.f_Em[m][k] for m, k in ehrs]
                  + list(ch.h_S) + list(ch.g_El))
        A_P, A_S = _vec_rows(pbs_rx), _vec_rows(cbs_rx)
        nPU, nE = len(pus), len(ehrs)
        ix_pu = lambda e: e  # noqa: E731
        ix_eh = lambda e: nPU + e  # noqa: E731
        ix_su = lambda j: nPU + nE + j  # noqa: E731
        ix_el = lambda l: nPU + nE + t.Ns + l  # noqa: E731

        def traces(X, A):
            return cp.real(A @ cp.vec(X, order="F"))

        sig_P = np.array([ch.sigma2_P[m][i] for m, i in pus]) / unit
        sig_Em = np.array([ch.sigma2_Em[m][k] for m, k in ehrs]) / unit
        sig_S = ch.sigma2_S / unit
        sig_El = ch.sigma2_El / unit
        multi = len(self.layouts) > 1
        # feasibility phase: one slack (nats) loosening every secrecy target, capped at 0 otherwise
        slack = self.slack = cp.Variable(nonneg=True)
        self.slack_cap = cp.Parameter(nonneg=True, value=0.0)
        self.slack_weight = cp.Parameter(nonneg=True, value=0.0)
        self._add(slack <= self.slack_cap, "slack")
        psd_count = 0
        objective = 0
        eh_targets_P, eh_targets_S = [], []

        for ts, lay in enumerate(self.layouts):
            W_p = [cp.Variable((nP, nP), hermitian=True) for _ in range(t.M)]
            S_p = [cp.Variable((nP, nP), hermitian=True) for _ in range(t.M)]
            W_s = {j: cp.Variable((nS, nS), hermitian=True) for j in lay.served}
            S_s = None if self.scheme is Scheme.NOMA_NOJAM else cp.Variable((nS, nS), hermitian=True)
            sv = _SlotVars(lay, W_p, S_p, W_s, S_s)
            self.slots.append(sv)
            for X in [*W_p, *S_p, *W_s.values()] + ([S_s] if S_s is not None else []):
                self._add(X >> 0, "PSD")
                psd_count += 1
            objective += sum(cp.real(cp.trace(X)) for X in [*W_p, *S_p, *W_s.values()])
            if S_s is not None:
                objective += cp.real(cp.trace(S_s))

            tW_p = [traces(X, A_P) for X in W_p]
            pbs_total = sum(traces(W_p[m] + S_p[m], A_P) for m in range(t.M))
            tW_s = {j: traces(X, A_S) for j, X in W_s.items()}
            tS_s = traces(S_s, A_S) if S_s is not None else None

            def cbs(idx, users, with_an=True):
                expr = sum(tW_s[u][idx] for u in users) if users else 0
                if with_an and tS_s is not None:
                    expr = expr + tS_s[idx]
                return expr

            V = lambda shape=(): cp.Variable(shape)  # noqa: E731
            pre = f"t{ts + 1}:" if multi else ""

            # ---- primary secrecy
            aux = sv.aux
            aux["alpha_P"], aux["lambda_P"] = V(nPU), V(nPU)
            aux["beta"], aux["delta"] = V(t.M), V(t.M)
            aux["mu_E"], aux["rho_E"] = V(nE), V(nE)
            for e, (m, i) in enumerate(pus):
                lbl = f"{pre}m={m + 1},i={i + 1}"
                gamma = (self.reqs.gamma_P[m][i] + self.settings.rate_margin)
                Gam = pbs_total[ix_pu(e)] + cbs(ix_pu(e), lay.served) + sig_P[e]
                Int = Gam - tW_p[m][ix_pu(e)]
                self._add(aux["alpha_P"][e] + aux["beta"][m] - aux["lambda_P"][e] <= -gamma * LN2 + slack,
                          "pu-rate", lbl)
                self._lin_le(Int, aux["alpha_P"][e], "alpha_P", e, ts, "pu-int-tangent", lbl)
                self._exp_le(aux["lambda_P"][e], Gam, "lambda_P", e, ts, "pu-sig-exp", lbl)
            for m in range(t.M):
                lbl = f"{pre}m={m + 1}"
                # exp(delta) <= tau <= exp(b~)(beta - b~ + 1)
                self._exp_lin(aux["delta"][m], 0.0, aux["beta"][m], "beta", m, ts, "pu-eve-tau", lbl)
            for e, (m, k) in enumerate(ehrs):
                lbl = f"{pre}m={m + 1},k={k + 1}"
                num = pbs_total[ix_eh(e)] + cbs(ix_eh(e), lay.served) + sig_Em[e]
                den = num - tW_p[m][ix_eh(e)]
                self._add(aux["mu_E"][e] - aux["rho_E"][e] - aux["delta"][m] <= 0, "pu-eve-rate", lbl)
                self._lin_le(num, aux["mu_E"][e], "mu_E", e, ts, "pu-eve-tangent", lbl)
                self._exp_le(aux["rho_E"][e], den, "rho_E", e, ts, "pu-eve-exp", lbl)

            # ---- strongest served SU
            served = lay.served
            last = served[-1]
            for name in ("alpha_sNs", "beta_sNs", "lambda_sNs", "omega_sNs"):
                aux[name] = V()
            aux["mu_El"], aux["rho_sl"] = V(t.Ks), V(t.Ks)
            gamma = lay.rate_scale * self.reqs.gamma_S[last] + self.settings.rate_margin
            lbl = f"{pre}j={last + 1}"
            Gam = pbs_total[ix_su(last)] + cbs(ix_su(last), [last]) + sig_S[last]
            Int = Gam - tW_s[last][ix_su(last)]
            self._add(aux["alpha_sNs"] + aux["beta_sNs"] - aux["lambda_sNs"] <= -gamma * LN2 + slack,
                      "su-last-rate", lbl)
            self._lin_le(Int, aux["alpha_sNs"], "alpha_sNs", None, ts, "su-last-int-tangent", lbl)
            self._exp_le(aux["lambda_sNs"], Gam, "lambda_sNs", None, ts, "su-last-sig-exp", lbl)
            for l in range(t.Ks):
                lbl_l = f"{pre}j={last + 1},l={l + 1}"
                Lam = pbs_total[ix_el(l)] + cbs(ix_el(l), [last]) + sig_El[l]
                self._add(aux["mu_El"][l] - aux["rho_sl"][l] - aux["omega_sNs"] <= 0, "su-last-eve-rate", lbl_l)
                self._lin_le(Lam, aux["mu_El"][l], "mu_El", l, ts, "su-last-eve-tangent", lbl_l)
                self._exp_le(aux["rho_sl"][l], Lam - tW_s[last][ix_el(l)], "rho_sl", l, ts, "su-last-eve-exp", lbl_l)
            # exp(omega) <= tau_S <= exp(b~)(beta - b~ + 1)
            self._exp_lin(aux["omega_sNs"], 0.0, aux["beta_sNs"], "beta_sNs", None, ts, "su-last-eve-tau", lbl)

            # ---- earlier SUs under SIC
            early = served[:-1]
            J, L = len(early), len(served)
            aux["alpha_sjz"] = {}
            aux["lambda_sjz"] = {}
            for name in ("xi_sj", "tau_Sj"):
                aux[name] = V(J) if J else None
            aux["mu_Elj"] = V((t.Ks, J)) if J else None
            aux["rho_slj"] = V((t.Ks, J)) if J else None
            for a, j in enumerate(early):
                lbl = f"{pre}j={j + 1}"
                gamma = lay.rate_scale * self.reqs.gamma_S[j] + self.settings.rate_margin
                later = served[a:]
                for b in range(a, L):
                    z = served[b]
                    lbl_z = f"{pre}j={j + 1},z={z + 1}"
                    al, la = V(), V()
                    aux["alpha_sjz"][(a, b)] = al
                    aux["lambda_sjz"][(a, b)] = la
                    Lam = pbs_total[ix_su(z)] + cbs(ix_su(z), later) + sig_S[z]
                    self._add(al + aux["xi_sj"][a] - la <= 0, "su-sic-rate", lbl_z)
                    self._lin_le(Lam - tW_s[j][ix_su(z)], al, "alpha_sjz", (a, b), ts, "su-sic-tangent", lbl_z)
                    self._exp_le(la, Lam, "lambda_sjz", (a, b), ts, "su-sic-exp", lbl_z)
                # 2^g exp(tau_S) <= 2^g omega <= kappa <= exp(x~)(xi - x~ + 1)
                self._exp_lin(aux["tau_Sj"][a], gamma * LN2 - slack, aux["xi_sj"][a], "xi_sj", a, ts,
                              "su-eve-tau", lbl)
                for l in range(t.Ks):
                    lbl_l = f"{pre}j={j + 1},l={l + 1}"
                    mu, rho = aux["mu_Elj"][l, a], aux["rho_slj"][l, a]
                    Lam = pbs_total[ix_el(l)] + cbs(ix_el(l), later) + sig_El[l]
                    self._add(mu - rho - aux["tau_Sj"][a] <= 0, "su-eve-rate", lbl_l)
                    self._lin_le(Lam, mu, "mu_Elj", (l, a), ts, "su-eve-tangent", lbl_l)
                    self._exp_le(rho, Lam - tW_s[j][ix_el(l)], "rho_slj", (l, a), ts, "su-eve-exp", lbl_l)

            # ---- interference cap C3
            back = 1.0 - self.settings.power_margin
            for e, (m, i) in enumerate(pus):
                self._add(cbs(ix_pu(e), served) <= back * self.reqs.upsilon[m][i] / unit,
                          "C3", f"{pre}m={m + 1},i={i + 1}")

            # ---- energy harvesting C4, C5
            rf_P = [pbs_total[ix_eh(e)] + cbs(ix_eh(e), served) for e in range(nE)]
            rf_S = [pbs_total[ix_el(l)] + cbs(ix_el(l), served) for l in range(t.Ks)]
            if not multi:
                bump = 1.0 + self.settings.power_margin
                for e, (m, k) in enumerate(ehrs):
                    thr = eh_rf_threshold(self.reqs.zeta_A1, self.eh.primary[m][k]) / unit
                    self._add(rf_P[e] >= bump * thr, "eh", f"A1:m={m + 1},k={k + 1}")
                for l in range(t.Ks):
                    thr = eh_rf_threshold(self.reqs.zeta_A2, self.eh.secondary[l]) / unit
                    self._add(rf_S[l] >= bump * thr, "eh", f"A2:l={l + 1}")
            else:
                hP, hS = V(nE), V(t.Ks)
                aux["eh_P"], aux["eh_S"] = hP, hS
                eh_targets_P.append(hP)
                eh_targets_S.append(hS)
                for e, (m, k) in enumerate(ehrs):
                    self._eh_slot(rf_P[e], hP[e], self.eh.primary[m][k], "eh_P", e, ts,
                                  f"{pre}A1:m={m + 1},k={k + 1}")
                for l in range(t.Ks):
                    self._eh_slot(rf_S[l], hS[l], self.eh.secondary[l], "eh_S", l, ts,
                                  f"{pre}A2:l={l + 1}")

        if multi:
            # harvested power averaged over slots: mean_t (pmax - exp(s_t)) >= zeta
            T = len(self.layouts)
            bump = 1.0 + self.settings.power_margin
            groups = [(ehrs, eh_targets_P, self.reqs.zeta_A1, lambda e: self.eh.primary[ehrs[e][0]][ehrs[e][1]],
                       lambda e: f"avg:A1:m={ehrs[e][0] + 1},k={ehrs[e][1] + 1}"),
                      (range(t.Ks), eh_targets_S, self.reqs.zeta_A2, lambda l: self.eh.secondary[l],
                       lambda l: f"avg:A2:l={l + 1}")]
            for items, targets, zeta, circ, name in groups:
                for e in range(len(items)):
                    room = T * (circ(e).p_max - bump * zeta) / unit
                    r = np.log(room)
                    self._add(sum(cp.exp(h[e] - r) for h in targets) <= 1.0, "eh", name(e))
            objective = objective / T

        self.objective_expr = objective
        self.problem = cp.Problem(cp.Minimize(objective + self.slack_weight * slack), self.constraints)
        self.psd_count = psd_count

    def _eh_slot(self, rf, s, circuit, key, idx, ts, label):
        """RF input >= inverse-EH of the slot's harvested power pmax - exp(s), tangent at s~.

        With h = pmax - exp(s) the inverse sigmoid splits into a term linear
        in s and a concave log term, which is replaced by its tangent.
        """
        unit = self.settings.power_unit
        a, b, pmax = circuit.a * unit, circuit.b / unit, circuit.p_max / unit
        c1 = cp.Parameter()
        c0 = cp.Parameter()
        self._setters.append((ts, key, idx, "eh", c1, c0, (a, b, pmax, circuit.Psi)))
        self._add(s <= np.log(pmax), "eh", label)
        self._add(rf + c1 * s >= c0, "eh", label)

    # -- parameters ----------------------------------------------------------
    def set_point(self, iterate: ScaIterate):
        for entry in self._setters:
            ts, key, idx, kind = entry[:4]
            val = iterate.slots[ts][key]
            x = float(val if idx is None else val[idx])
            if kind == "lin":
                s, x0 = entry[4], entry[5]
                x0.value = x
                s.value = float(np.exp(-x))
            elif kind == "explin":
                entry[4].value = x
            elif kind == "exp":
                s, r = entry[4], entry[5]
                r.value = x
                s.value = float(np.exp(-x))
            else:
                c1, c0, (a, b, pmax, Psi) = entry[4], entry[5], entry[6]
                x = min(x, np.log(pmax))
                u = pmax - (1 - Psi) * np.exp(x)
                g = -(1 - Psi) * np.exp(x) / u
                c1.value = (1 - g) / a
                c0.value = b + (np.log(u) - np.log(1 - Psi) - g * x) / a

    def set_phase(self, feasibility: bool, weight: float = 1e4, cap: float = 1e3):
        """Toggle the feasibility phase, in which secrecy targets may be missed at a penalty."""
        self.slack_cap.value = cap if feasibility else 0.0
        self.slack_weight.value = weight if feasibility else 0.0

    def tag_counts(self) -> dict[str, int]:
        counts: dict[str, int] = {}
        for tag, _ in self.tags:
            counts[tag] = counts.get(tag, 0) + 1
        return counts

    def dump(self) -> str:
        """Human-readable listing: constraint id, tag, index label, size."""
        lines = [f"objective: total transmit power ({len(self.layouts)} slot(s)), unit "
                 f"{self.settings.power_unit:g} W"]
        for n, (con, (tag, label)) in enumerate(zip(self.constraints, self.tags)):
            lines.append(f"{n:4d}  ({tag:>4})  {label:<24} size={con.size}")
        return "\n".join(lines)

    def max_violation(self) -> float:
        """Largest residual over the non-PSD rows at the current variable values."""
        worst = 0.0
        for con, (tag, _) in zip(self.constraints, self.tags):
            if tag == "PSD":
                continue
            v = con.violation()
            if v is None:
                return float("inf")
            worst = max(worst, float(np.max(v)))
        return worst

    # -- reading results -----------------------------------------------------
    def read_solution(self):
        unit = self.settings.power_unit
        t = self.channels.topology
        sols, auxes = [], []
        for sv in self.slots:
            nS = t.cbs_antennas
            W_p = [unit * project_psd(X.value) for X in sv.W_p]
            S_p = [unit * project_psd(X.value) for X in sv.S_p]
            W_s = [unit * project_psd(sv.W_s[j].value) if j in sv.W_s else np.zeros((nS, nS), complex)
                   for j in range(t.Ns)]
            S_s = unit * project_psd(sv.S_s.value) if sv.S_s is not None else np.zeros((nS, nS), complex)
            sols.append(CovarianceSolution(W_p, S_p, W_s, S_s))
            aux = {}
            for key, v in sv.aux.items():
                if isinstance(v, dict):
                    J = len(sv.layout.served) - 1
                    arr = np.full((J, J + 1), np.nan)
                    for (a, b), var in v.items():
                        arr[a, b] = float(var.value)
                    aux[key] = arr
                elif v is None:
                    aux[key] = np.empty(0) if key in ("xi_sj", "tau_Sj") \
                        else np.empty((t.Ks, 0))
                else:
                    aux[key] = np.array(v.value, dtype=float)
            auxes.append(aux)
        solution = sols[0] if len(sols) == 1 else TdmaSolution(sols)
        return solution, auxes


def build_subproblem(channels: ChannelSet, reqs: QosRequirements, eh: EhParams,
                     iterate: ScaIterate, scheme: Scheme = Scheme.NOMA_JAMMING,
                     settings: SolverSettings | None = None) -> ConvexSubproblem:
    prob = ConvexSubproblem(channels, reqs, eh, scheme, settings)
    prob.set_point(iterate)
    return prob


# ---------------------------------------------------------------------------
# solving


class Status(str, enum.Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    NUMERIC_FAILURE = "numeric-failure"


@dataclass
class SubproblemSolution:
    sol: object
    aux: ScaIterate | None
    objective: float
    status: Status
    diagnostics: str = ""
    slack: float = 0.0


def backend_options(backend: str) -> dict:
    # Clarabel stalls just above its default 1e-8 gap on these SDPs; the
    # secrecy/EH margins in SolverSettings absorb a 1e-7 relative gap.
    if backend.upper() == "CLARABEL":
        return {"tol_gap_abs": 1e-7, "tol_gap_rel": 1e-7, "tol_feas": 1e-7, "max_iter": 400}
    if backend.upper() == "SCS":
        return {"eps": 1e-9, "max_iters": 50000}
    return {}


def solve_subproblem(prob: ConvexSubproblem, settings: SolverSettings | None = None) -> SubproblemSolution:
    settings = settings or prob.settings
    try:
        with warnings.catch_warnings():
            warnings.filterwarnings("ignore", message="Solution may be inaccurate")
            # cvxpy's own complex-to-real pass on 1x1 Hermitian variables
            warnings.filterwarnings("ignore", message="Initializing a Constant with a nested list")
            prob.problem.solve(solver=settings.backend, **backend_options(settings.backend))
    except cp.error.SolverError as exc:
        return SubproblemSolution(None, None, float("nan"), Status.NUMERIC_FAILURE, str(exc))
    status = prob.problem.status
    if status in (cp.INFEASIBLE, cp.INFEASIBLE_INACCURATE):
        return SubproblemSolution(None, None, float("nan"), Status.INFEASIBLE, status)
    if status == cp.OPTIMAL_INACCURATE:
        # Clarabel often stops a hair above its gap tolerance on these programs;
        # keep the point if it actually satisfies every scaled row.
        worst = prob.max_violation()
        if not worst <= settings.accept_violation:
            return SubproblemSolution(None, None, float("nan"), Status.NUMERIC_FAILURE,
                                      f"{status}, max violation {worst:.2e}")
    elif status != cp.OPTIMAL:
        return SubproblemSolution(None, None, float("nan"), Status.NUMERIC_FAILURE, status)
    sol, auxes = prob.read_solution()
    if not all(np.all(np.isfinite(v[~np.isnan(v)])) for a in auxes for v in a.values()):
        return SubproblemSolution(None, None, float("nan"), Status.NUMERIC_FAILURE, "non-finite aux")
    return SubproblemSolution(sol, ScaIterate(auxes, sol), scheme_power(sol), Status.OPTIMAL, status,
                              float(prob.slack.value or 0.0))


def update_iterate(solution: SubproblemSolution) -> ScaIterate:
    """Next linearization point: this round's optimal auxiliary values."""
    if solution.status is not Status.OPTIMAL:
        raise ValueError(f"cannot update from a {solution.status.value} subproblem")
    return solution.aux.copy()


# ---------------------------------------------------------------------------
# driver


@dataclass
class ScaResult:
    solution: object
    objective_trace: list[float]
    iterations: int
    converged: bool
    status: str                   # converged | max-iterations | stalled | infeasible | failed
    scheme: Scheme = Scheme.NOMA_JAMMING
    restarts: int = 0
    notes: list[str] = field(default_factory=list)

    @property
    def objective(self) -> float:
        return self.objective_trace[-1] if self.objective_trace else float("nan")

    @property
    def feasible(self) -> bool:
        return self.solution is not None and bool(self.objective_trace)


def run_sca(channels: ChannelSet, reqs: QosRequirements, eh: EhParams,
            settings: SolverSettings | None = None, rng_seed=0,
            scheme: Scheme = Scheme.NOMA_JAMMING) -> ScaResult:
    """Iterate build -> solve -> update until consecutive objectives differ by at most the tolerance.

    When the first subproblem at the starting point is infeasible (or the
    backend fails on it), a feasibility phase runs first: the same surrogate
    with every secrecy target loosened by one penalized slack, iterated until
    the slack vanishes.  Its iterations are not part of the objective trace.
    """
    settings = settings or SolverSettings()
    scheme = Scheme(scheme)
    notes: list[str] = []
    restart = 0
    try:
        reqs.validate(channels.topology, eh)
        iterate = initialize_iterate(channels, reqs, eh, rng_seed, scheme, restart, settings)
    except InitializationInfeasible as exc:
        return ScaResult(None, [], 0, False, "infeasible", scheme, restart, [str(exc)])
    except Exception as exc:  # malformed requirement, e.g. zeta above saturation
        return ScaResult(None, [], 0, False, "failed", scheme, notes=[f"build: {exc}"])
    try:
        prob = ConvexSubproblem(channels, reqs, eh, scheme, settings)
    except Exception as exc:
        return ScaResult(None, [], 0, False, "failed", scheme, notes=[f"build: {exc}"])

    trace: list[float] = []
    best = None
    status = "max-iterations"
    converged = False
    phase1 = tried_phase1 = False
    phase1_iters = 0
    last_slack = np.inf
    n = 0
    while n < settings.max_iterations:
        prob.set_phase(phase1)
        prob.set_point(iterate)
        res = solve_subproblem(prob, settings)
        if res.status is Status.NUMERIC_FAILURE:
            notes.append(f"iter {n + 1}: {res.diagnostics}; retrying from perturbed point")
            prob.set_point(iterate.perturbed(1e-6))
            res = solve_subproblem(prob, settings)
        if res.status is not Status.OPTIMAL:
            if not trace and not tried_phase1:
                phase1 = tried_phase1 = True
                notes.append(f"start point {res.status.value}; feasibility phase")
                continue
            if not trace and restart < settings.restart_limit:
                restart += 1
                phase1 = tried_phase1 = False
                notes.append(f"iter 1 {res.status.value}; restart {restart}")
                try:
                    iterate = initialize_iterate(channels, reqs, eh, rng_seed, scheme, restart, settings)
                except InitializationInfeasible as exc:
                    notes.append(str(exc))
                    break
                continue
            if not trace:
                status = "infeasible" if res.status is Status.INFEASIBLE else "failed"
            else:
                status = "stalled"
                notes.append(f"iter {n + 1}: {res.status.value}; keeping last feasible point")
            break
        iterate = update_iterate(res)
        if phase1:
            phase1_iters += 1
            if res.slack <= 1e-7:
                phase1 = False
                notes.append(f"feasibility phase done after {phase1_iters} iterations")
            elif phase1_iters >= settings.max_iterations or last_slack - res.slack <= 1e-9:
                notes.append(f"feasibility phase stuck at slack {res.slack:.3e} nats")
                status = "infeasible"
                break
            last_slack = res.slack
            continue
        n += 1
        trace.append(res.objective)
        best = res
        if len(trace) >= 2 and abs(trace[-1] - trace[-2]) <= settings.tolerance:
            converged = True
            status = "converged"
            break
    solution = best.sol if best is not None else None
    if solution is None and status == "max-iterations":
        status = "infeasible"
    return ScaResult(solution, trace, len(trace), converged, status, scheme, restart, notes)
