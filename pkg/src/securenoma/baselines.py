"""Comparison schemes: NOMA without cooperative jamming, and TDMA-based OMA."""
from __future__ import annotations

import numpy as np

from .extraction import principal_beamformer, rank_one_measure
from .metrics import (ConstraintCheck, FeasibilityReport, harvested_power, power_terms,
                      pu_secrecy_rate, rank_ratio, secondary_ehr_rf, su_single_user_rate,
                      verify_feasibility, NumericDomainError)
from .model import ChannelSet, CovarianceSolution, EhParams, QosRequirements, outer
from .sca import ScaResult, Scheme, SolverSettings, TdmaSolution, run_sca

SCHEME_NOTES = {
    Scheme.NOMA_JAMMING: "NOMA with PBS and CBS artificial noise (full scheme)",
    Scheme.NOMA_NOJAM: "NOMA with the CBS artificial-noise covariance fixed to zero; PBS noise kept",
    Scheme.OMA_TDMA: ("Ns equal slots, slot j serves SU j alone; SU secrecy rate scaled by 1/Ns; "
                      "primary constraints and the interference cap hold per slot; harvested power "
                      "averaged over slots; objective is the slot-averaged transmit power"),
}


def solve_no_jamming(channels: ChannelSet, reqs: QosRequirements, eh: EhParams,
                     settings: SolverSettings | None = None, seed=0) -> ScaResult:
    return run_sca(channels, reqs, eh, settings, seed, Scheme.NOMA_NOJAM)


def solve_oma_tdma(channels: ChannelSet, reqs: QosRequirements, eh: EhParams,
                   settings: SolverSettings | None = None, seed=0) -> ScaResult:
    return run_sca(channels, reqs, eh, settings, seed, Scheme.OMA_TDMA)


def solve_scheme(scheme, channels, reqs, eh, settings=None, seed=0) -> ScaResult:
    return run_sca(channels, reqs, eh, settings, seed, Scheme(scheme))


def _rate(fn, *args):
    try:
        return fn(*args)
    except NumericDomainError:
        return float("-inf")


def verify_tdma(channels: ChannelSet, sol: TdmaSolution, reqs: QosRequirements, eh: EhParams,
                tol_rate: float = 1e-6, tol_pow: float = 1e-9) -> FeasibilityReport:
    """C1 and C3 in every slot, slot-scaled SU secrecy rate, slot-averaged harvested power."""
    t = channels.topology
    T = len(sol.slots)
    if T != t.Ns:
        raise ValueError(f"expected {t.Ns} slots, got {T}")
    report = FeasibilityReport()
    add = report.checks.append
    phi_P = np.zeros(len(t.primary_ehr_pairs))
    phi_S = np.zeros(t.Ks)
    for j, slot in enumerate(sol.slots):
        terms = power_terms(channels, slot)
        for m, i in t.pu_pairs:
            margin = _rate(pu_secrecy_rate, terms, m, i) - reqs.gamma_P[m][i]
            add(ConstraintCheck(f"C1[t={j + 1},m={m + 1},i={i + 1}]", margin, margin >= -tol_rate))
            margin = reqs.upsilon[m][i] - terms.interference_P[m][i]
            add(ConstraintCheck(f"C3[t={j + 1},m={m + 1},i={i + 1}]", float(margin), margin >= -tol_pow))
        margin = _rate(su_single_user_rate, terms, j) / T - reqs.gamma_S[j]
        add(ConstraintCheck(f"C2[j={j + 1}]", margin, margin >= -tol_rate))
        for e, (m, k) in enumerate(t.primary_ehr_pairs):
            phi_P[e] += harvested_power(max(terms.Gamma_E[m][k], 0.0), eh.primary[m][k]) / T
        rf = secondary_ehr_rf(terms)
        for l in range(t.Ks):
            phi_S[l] += harvested_power(max(rf[l], 0.0), eh.secondary[l]) / T
        report.rank_ratios[f"t{j + 1}:W_s{j + 1}"] = rank_ratio(slot.W_s[j])
        for m in range(t.M):
            report.rank_ratios[f"t{j + 1}:W_p{m + 1}"] = rank_ratio(slot.W_p[m])
    for e, (m, k) in enumerate(t.primary_ehr_pairs):
        margin = float(phi_P[e] - reqs.zeta_A1)
        add(ConstraintCheck(f"C4[m={m + 1},k={k + 1}]", margin, margin >= -tol_pow))
    for l in range(t.Ks):
        margin = float(phi_S[l] - reqs.zeta_A2)
        add(ConstraintCheck(f"C5[l={l + 1}]", margin, margin >= -tol_pow))
    return report


def verify_solution(channels, sol, reqs, eh, **tol) -> FeasibilityReport:
    """Dispatch to the verifier matching the solution's scheme."""
    if isinstance(sol, TdmaSolution):
        return verify_tdma(channels, sol, reqs, eh, **tol)
    return verify_feasibility(channels, sol, reqs, eh, **tol)


def eigen_tdma(sol: TdmaSolution) -> TdmaSolution:
    """Slotwise principal-eigenvector reconstruction (used when every slot is rank-one)."""
    slots = []
    for s in sol.slots:
        slots.append(CovarianceSolution([outer(principal_beamformer(W)) for W in s.W_p], list(s.Sigma_p),
                                        [outer(principal_beamformer(W)) for W in s.W_s], s.Sigma_s))
    return TdmaSolution(slots)


def tdma_rank_one(sol: TdmaSolution, rank_tolerance: float = 1e-6) -> bool:
    return all(rank_one_measure(W) <= rank_tolerance for s in sol.slots for W in [*s.W_p, *s.W_s])
