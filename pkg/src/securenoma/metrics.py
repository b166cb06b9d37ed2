"""Closed-form received powers, secrecy rates, harvested power and feasibility checks."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .model import (ChannelSet, CovarianceSolution, EhCircuitParams, EhParams, QosRequirements,
                    ValidationError)


class NumericDomainError(ArithmeticError):
    """A rate was requested where its log argument is undefined."""


class InfeasibleRequirementError(ValueError):
    """A harvested-power target at or above saturation."""


def _qf(A: np.ndarray, v: np.ndarray) -> float:
    """v^H A v = Tr(A v v^H), real part."""
    return float(np.real(np.vdot(v, A @ v)))


@dataclass
class PowerTerms:
    """Received powers of every receiver (watts).

    The ``*_int`` arrays hold the matching "total minus own signal" terms,
    accumulated directly from their nonnegative parts rather than by
    subtraction, so that rates remain accurate at very high SINR.
    """

    Gamma_P: list[np.ndarray]       # [m][i]
    Gamma_P_int: list[np.ndarray]
    Gamma_E: list[np.ndarray]       # [m][k], noise excluded
    Gamma_E_int: list[np.ndarray]   # Gamma_E - Tr(W_p G_E)
    sigma2_Em: list[np.ndarray]
    Gamma_S: np.ndarray             # [j]
    Gamma_S_int: np.ndarray
    Lambda_E: np.ndarray            # [l, j]
    Lambda_E_int: np.ndarray
    Lambda_S: np.ndarray            # [j, z]
    Lambda_S_int: np.ndarray
    Lambda_sl: np.ndarray           # [l, j]
    Lambda_sl_int: np.ndarray
    sigma2_El: np.ndarray
    interference_P: list[np.ndarray]  # CBS power at each PU (constraint C3)


def power_terms(channels: ChannelSet, sol: CovarianceSolution) -> PowerTerms:
    t = channels.topology
    if (len(sol.W_p), len(sol.Sigma_p), len(sol.W_s)) != (t.M, t.M, t.Ns):
        raise ValidationError("solution does not match topology")
    if sol.W_p[0].shape != (t.pbs_antennas,) * 2 or sol.Sigma_s.shape != (t.cbs_antennas,) * 2:
        raise ValidationError("covariance dimensions do not match antenna counts")

    M, Ns, Ks = t.M, t.Ns, t.Ks
    pbs = [sol.W_p[m] + sol.Sigma_p[m] for m in range(M)]

    def pbs_power(v, skip_info=None):
        # all PBS power at v, optionally leaving out the information beam of one cluster
        total = 0.0
        for m in range(M):
            total += _qf(sol.Sigma_p[m], v)
            if m != skip_info:
                total += _qf(sol.W_p[m], v)
        return total

    def cbs_power(v, users, with_an=True):
        total = sum(_qf(sol.W_s[u], v) for u in users)
        if with_an:
            total += _qf(sol.Sigma_s, v)
        return total

    all_su = range(Ns)
    Gamma_P, Gamma_P_int, interf = [], [], []
    Gamma_E, Gamma_E_int = [], []
    for m in range(M):
        gp, gpi, cp_ = [], [], []
        for i in range(t.pu_counts[m]):
            h, f, s2 = channels.h_P[m][i], channels.f_S[m][i], channels.sigma2_P[m][i]
            cbs = cbs_power(f, all_su)
            other = pbs_power(h, skip_info=m) + cbs + s2
            gp.append(other + _qf(sol.W_p[m], h))
            gpi.append(other)
            cp_.append(cbs)
        Gamma_P.append(np.array(gp))
        Gamma_P_int.append(np.array(gpi))
        interf.append(np.array(cp_))
        ge, gei = [], []
        for k in range(t.ehr_counts_primary[m]):
            g, f = channels.g_Em[m][k], channels.f_Em[m][k]
            other = pbs_power(g, skip_info=m) + cbs_power(f, all_su)
            ge.append(other + _qf(sol.W_p[m], g))
            gei.append(other)
        Gamma_E.append(np.array(ge))
        Gamma_E_int.append(np.array(gei))

    q_pbs = np.array([pbs_power(channels.q_P[z]) for z in range(Ns)])
    qE_pbs = np.array([pbs_power(channels.q_El[l]) for l in range(Ks)])
    an_S = np.array([_qf(sol.Sigma_s, channels.h_S[z]) for z in range(Ns)])
    an_E = np.array([_qf(sol.Sigma_s, channels.g_El[l]) for l in range(Ks)])
    # sig_S[u, z] = Tr(W_s,u H_S,z); leak[u, l] = Tr(W_s,u G_E,l)
    sig_S = np.array([[_qf(sol.W_s[u], channels.h_S[z]) for z in range(Ns)] for u in range(Ns)])
    leak = np.array([[_qf(sol.W_s[u], channels.g_El[l]) for l in range(Ks)] for u in range(Ns)])

    Gamma_S_int = q_pbs + an_S + channels.sigma2_S
    Gamma_S = Gamma_S_int + np.diag(sig_S)
    Lambda_E_int = np.empty((Ks, Ns))
    Lambda_S_int = np.empty((Ns, Ns))
    Lambda_sl_int = np.empty((Ks, Ns))
    for j in range(Ns):
        Lambda_E_int[:, j] = qE_pbs + an_E + channels.sigma2_El
        Lambda_S_int[j, :] = q_pbs + an_S + sig_S[j + 1:, :].sum(axis=0) + channels.sigma2_S
        Lambda_sl_int[:, j] = qE_pbs + an_E + leak[j + 1:, :].sum(axis=0) + channels.sigma2_El
    Lambda_E = Lambda_E_int + leak.T
    Lambda_S = Lambda_S_int + sig_S
    Lambda_sl = Lambda_sl_int + leak.T

    return PowerTerms(
        Gamma_P=Gamma_P, Gamma_P_int=Gamma_P_int, Gamma_E=Gamma_E, Gamma_E_int=Gamma_E_int,
        sigma2_Em=[np.asarray(s) for s in channels.sigma2_Em],
        Gamma_S=Gamma_S, Gamma_S_int=Gamma_S_int, Lambda_E=Lambda_E, Lambda_E_int=Lambda_E_int,
        Lambda_S=Lambda_S, Lambda_S_int=Lambda_S_int, Lambda_sl=Lambda_sl,
        Lambda_sl_int=Lambda_sl_int, sigma2_El=np.asarray(channels.sigma2_El),
        interference_P=interf,
    )


def _scalar(x):
    x = np.asarray(x, dtype=float)
    return float(x) if x.ndim == 0 else x


def _log2_ratio(num, den):
    num, den = np.asarray(num, dtype=float), np.asarray(den, dtype=float)
    if not np.all((num > 0) & (den > 0)):
        raise NumericDomainError(f"log ratio undefined for {num}/{den}")
    return _scalar(np.log2(num / den))


# The rate functions broadcast: a PowerTerms whose entries carry a trailing
# candidate axis yields one rate per candidate.

def pu_eavesdropper_rate(terms: PowerTerms, m: int):
    """Strongest primary EHR's information rate about cluster ``m``'s message."""
    s2 = terms.sigma2_Em[m]
    return _scalar(np.max([_log2_ratio(terms.Gamma_E[m][k] + s2[k], terms.Gamma_E_int[m][k] + s2[k])
                           for k in range(len(s2))], axis=0))


def pu_secrecy_rate(terms: PowerTerms, m: int, i: int):
    """Secrecy rate of PU ``i`` of cluster ``m`` (0-based), bits/s/Hz; may be negative."""
    legit = _log2_ratio(terms.Gamma_P[m][i], terms.Gamma_P_int[m][i])
    return legit - pu_eavesdropper_rate(terms, m)


def su_single_user_rate(terms: PowerTerms, j: int):
    """Secrecy rate of SU ``j`` decoded without residual intra-secondary interference."""
    legit = _log2_ratio(terms.Gamma_S[j], terms.Gamma_S_int[j])
    eve = np.max([_log2_ratio(terms.Lambda_E[l, j], terms.Lambda_E_int[l, j])
                  for l in range(terms.Lambda_E.shape[0])], axis=0)
    return _scalar(legit - eve)


def su_secrecy_rate(terms: PowerTerms, j: int):
    """Worst-case NOMA secrecy rate of SU ``j`` (0-based)."""
    Ns = terms.Gamma_S.shape[0]
    if j == Ns - 1:
        return su_single_user_rate(terms, j)
    legit = np.min([_log2_ratio(terms.Lambda_S[j, z], terms.Lambda_S_int[j, z]) for z in range(j, Ns)],
                   axis=0)
    eve = np.max([_log2_ratio(terms.Lambda_sl[l, j], terms.Lambda_sl_int[l, j])
                  for l in range(terms.Lambda_sl.shape[0])], axis=0)
    return _scalar(legit - eve)


def harvested_power(received_rf, eh: EhCircuitParams):
    """Non-linear (logistic) harvested power in watts for RF input power in watts."""
    rf = np.asarray(received_rf, dtype=float)
    if np.any(rf < 0):
        raise ValidationError("received RF power must be >= 0")
    Psi = expit(-eh.a * eh.b)
    psi = eh.p_max * expit(eh.a * (rf - eh.b))
    out = (psi - eh.p_max * Psi) / (1.0 - Psi)
    return float(out) if out.ndim == 0 else out


def eh_rf_threshold(zeta: float, eh: EhCircuitParams) -> float:
    """Smallest RF input power whose harvested power reaches ``zeta`` watts."""
    zeta = float(zeta)
    if zeta < 0:
        raise ValidationError("harvested-power target must be >= 0")
    if zeta >= eh.p_max:
        raise InfeasibleRequirementError(f"target {zeta} W is not below saturation {eh.p_max} W")
    if zeta == 0.0:
        return 0.0   # the closed form leaves ~1e-19 of roundoff here
    Psi = eh.Psi
    # ln{Pmax/(zeta(1-Psi) + Pmax Psi) - 1}, rearranged to avoid cancellation near Pmax
    log_term = np.log((1.0 - Psi) * (eh.p_max - zeta)) - np.log(zeta * (1.0 - Psi) + eh.p_max * Psi)
    return float(eh.b - log_term / eh.a)


def total_power(sol: CovarianceSolution) -> float:
    return float(sum(np.real(np.trace(A)) for A in sol.matrices()))


def secondary_ehr_rf(terms: PowerTerms) -> np.ndarray:
    """RF input of each secondary EHR: everything both stations radiate at it, noise excluded."""
    return terms.Lambda_sl[:, 0] - terms.sigma2_El


def rank_ratio(W: np.ndarray) -> float:
    """lambda_2 / lambda_1 of a Hermitian PSD matrix (0 for rank <= 1)."""
    W = np.asarray(W)
    if W.shape[0] != W.shape[1] or not np.allclose(W, W.conj().T, atol=1e-12 * max(1.0, np.abs(W).max())):
        raise ValidationError("rank measure needs a Hermitian matrix")
    vals = np.linalg.eigvalsh(W)[::-1]
    if vals.size < 2 or vals[0] <= 0:
        return 0.0
    return float(max(vals[1], 0.0) / vals[0])


@dataclass
class ConstraintCheck:
    constraint: str
    margin: float
    satisfied: bool


@dataclass
class FeasibilityReport:
    checks: list[ConstraintCheck] = field(default_factory=list)
    rank_ratios: dict[str, float] = field(default_factory=dict)

    @property
    def feasible(self) -> bool:
        """True when every C1-C5 check passes; rank (C6) is informational only."""
        return all(c.satisfied for c in self.checks)

    def violations(self) -> list[ConstraintCheck]:
        return [c for c in self.checks if not c.satisfied]

    def min_margin(self, prefix: str) -> float:
        vals = [c.margin for c in self.checks if c.constraint.startswith(prefix)]
        return min(vals) if vals else float("inf")

    def records(self) -> list[dict]:
        rows = [{"constraint": c.constraint, "margin": c.margin, "satisfied": c.satisfied}
                for c in self.checks]
        rows += [{"constraint": f"C6[{name}]", "margin": r, "satisfied": ""}
                 for name, r in self.rank_ratios.items()]
        return rows


def _safe(fn, *args):
    try:
        return fn(*args)
    except NumericDomainError:
        return float("-inf")


def constraint_margins(channels: ChannelSet, terms: PowerTerms, reqs: QosRequirements,
                       eh: EhParams, rate_scale: float = 1.0) -> dict[str, object]:
    """Signed slack of C1-C5 keyed by constraint label (rates in bits/s/Hz, powers in watts).

    Works elementwise when ``terms`` carries a trailing candidate axis.
    ``rate_scale`` multiplies the SU secrecy rates (time-sharing baselines).
    """
    t = channels.topology
    out: dict[str, object] = {}
    for m in range(t.M):
        for i in range(t.pu_counts[m]):
            out[f"C1[m={m + 1},i={i + 1}]"] = _safe(pu_secrecy_rate, terms, m, i) - reqs.gamma_P[m][i]
    for j in range(t.Ns):
        out[f"C2[j={j + 1}]"] = rate_scale * _safe(su_secrecy_rate, terms, j) - reqs.gamma_S[j]
    for m in range(t.M):
        for i in range(t.pu_counts[m]):
            out[f"C3[m={m + 1},i={i + 1}]"] = reqs.upsilon[m][i] - terms.interference_P[m][i]
    for m in range(t.M):
        for k in range(t.ehr_counts_primary[m]):
            phi = harvested_power(np.maximum(terms.Gamma_E[m][k], 0.0), eh.primary[m][k])
            out[f"C4[m={m + 1},k={k + 1}]"] = phi - reqs.zeta_A1
    rf = secondary_ehr_rf(terms)
    for l in range(t.Ks):
        phi = harvested_power(np.maximum(rf[l], 0.0), eh.secondary[l])
        out[f"C5[l={l + 1}]"] = phi - reqs.zeta_A2
    return out


def margins_ok(margins: dict[str, object], tol_rate: float = 1e-6, tol_pow: float = 1e-9):
    """Elementwise AND of every C1-C5 margin against its tolerance."""
    ok = True
    for name, v in margins.items():
        tol = tol_rate if name[:2] in ("C1", "C2") else tol_pow
        ok = np.logical_and(ok, np.asarray(v) >= -tol)
    return ok


def verify_feasibility(channels: ChannelSet, sol: CovarianceSolution, reqs: QosRequirements,
                       eh: EhParams, tol_rate: float = 1e-6, tol_pow: float = 1e-9) -> FeasibilityReport:
    """Per-constraint margins of a candidate NOMA solution; infeasibility is returned, never raised."""
    t = channels.topology
    report = FeasibilityReport()
    for name, margin in constraint_margins(channels, power_terms(channels, sol), reqs, eh).items():
        tol = tol_rate if name[:2] in ("C1", "C2") else tol_pow
        margin = float(margin)
        report.checks.append(ConstraintCheck(name, margin, margin >= -tol))
    for m in range(t.M):
        report.rank_ratios[f"W_p{m + 1}"] = rank_ratio(sol.W_p[m])
    for j in range(t.Ns):
        report.rank_ratios[f"W_s{j + 1}"] = rank_ratio(sol.W_s[j])
    return report
