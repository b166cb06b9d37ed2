"""Beamforming vectors from relaxed covariance solutions."""
from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from .metrics import (NumericDomainError, PowerTerms, constraint_margins, margins_ok, power_terms,
                      rank_ratio, total_power)
from .model import ChannelSet, CovarianceSolution, EhParams, QosRequirements, ValidationError, outer


class RankTestFailed(ValueError):
    """The matrix is not rank-one within tolerance; use randomization instead."""


class RandomizationFailure(RuntimeError):
    pass


def rank_one_measure(W: np.ndarray, psd_tol: float = 1e-9) -> float:
    """lambda_2 / lambda_1 with eigenvalues sorted descending; 0 for rank <= 1."""
    W = np.asarray(W)
    if W.ndim != 2 or W.shape[0] != W.shape[1]:
        raise ValidationError("rank measure needs a square matrix")
    ratio = rank_ratio(W)
    vals = np.linalg.eigvalsh(W)
    if vals.min() < -psd_tol * max(vals.max(), 0.0) - 1e-300:
        raise ValidationError("matrix is not positive semidefinite")
    return ratio


def principal_beamformer(W: np.ndarray, rank_tolerance: float | None = None) -> np.ndarray:
    """sqrt(lambda_1) u_1, so that w w^H reproduces W up to its lambda_2 part."""
    W = np.asarray(W)
    if rank_tolerance is not None and rank_one_measure(W) > rank_tolerance:
        raise RankTestFailed(f"rank ratio {rank_one_measure(W):.3e} exceeds {rank_tolerance:g}")
    vals, vecs = np.linalg.eigh(0.5 * (W + W.conj().T))
    lam = max(vals[-1], 0.0)
    return np.sqrt(lam) * vecs[:, -1]


@dataclass
class BeamformerSolution:
    """Rank-one information beams with the artificial-noise covariances kept as matrices."""

    w_p: list[np.ndarray]
    w_s: list[np.ndarray]
    Sigma_p: list[np.ndarray]
    Sigma_s: np.ndarray
    method: str = "eigen"       # eigen | randomized
    scale: float = 1.0          # common factor applied to the information beams

    def covariances(self) -> CovarianceSolution:
        return CovarianceSolution([outer(w) for w in self.w_p], list(self.Sigma_p),
                                  [outer(w) for w in self.w_s], self.Sigma_s)

    @property
    def total_power(self) -> float:
        return total_power(self.covariances())

    def to_dict(self) -> dict:
        cplx = lambda a: {"re": np.real(a).tolist(), "im": np.imag(a).tolist()}  # noqa: E731
        return {"w_p": [cplx(w) for w in self.w_p], "w_s": [cplx(w) for w in self.w_s],
                "Sigma_p": [cplx(S) for S in self.Sigma_p], "Sigma_s": cplx(self.Sigma_s),
                "method": self.method, "scale": self.scale}


def _beams_only(sol: CovarianceSolution, w_p, w_s) -> CovarianceSolution:
    return CovarianceSolution([outer(w) for w in w_p], list(sol.Sigma_p), [outer(w) for w in w_s],
                              sol.Sigma_s)


def _trail(x):
    return [np.asarray(v)[..., None] for v in x] if isinstance(x, list) else np.asarray(x)[..., None]


def _stack_terms(items: list[PowerTerms]) -> PowerTerms:
    """Stack per-candidate power terms along a trailing axis."""
    out = {}
    for f in fields(PowerTerms):
        vals = [getattr(t, f.name) for t in items]
        if f.name.startswith("sigma2"):
            out[f.name] = _trail(vals[0])
        elif isinstance(vals[0], list):
            out[f.name] = [np.stack([v[m] for v in vals], axis=-1) for m in range(len(vals[0]))]
        else:
            out[f.name] = np.stack(vals, axis=-1)
    return PowerTerms(**out)


def _affine_terms(base: PowerTerms, slope: PowerTerms, c: np.ndarray) -> PowerTerms:
    """base + c * slope, fieldwise; noise fields are taken from ``base``."""
    out = {}
    for f in fields(PowerTerms):
        b, s = getattr(base, f.name), getattr(slope, f.name)
        if f.name.startswith("sigma2"):
            out[f.name] = b
        elif isinstance(b, list):
            out[f.name] = [bm + c * sm for bm, sm in zip(b, s)]
        else:
            out[f.name] = b + c * s
    return PowerTerms(**out)


def _sub_terms(a: PowerTerms, b: PowerTerms) -> PowerTerms:
    out = {}
    for f in fields(PowerTerms):
        x, y = getattr(a, f.name), getattr(b, f.name)
        if f.name.startswith("sigma2"):
            out[f.name] = x
        elif isinstance(x, list):
            out[f.name] = [xm - ym[..., None] for xm, ym in zip(x, y)]
        else:
            out[f.name] = x - y[..., None]
    return PowerTerms(**out)


def _broadcast(terms: PowerTerms) -> PowerTerms:
    out = {}
    for f in fields(PowerTerms):
        x = getattr(terms, f.name)
        if isinstance(x, list):
            out[f.name] = [xm[..., None] for xm in x]
        else:
            out[f.name] = x[..., None]
    return PowerTerms(**out)


def smallest_feasible_scale(channels: ChannelSet, sol: CovarianceSolution, candidates, reqs,
                            eh: EhParams, c_min=1e-3, c_max=1e3, grid=121, bisections=50,
                            tol_rate=0.0, tol_pow=0.0):
    """Smallest common factor on the information beams of each candidate restoring C1-C5.

    ``candidates`` is a list of (w_p, w_s) pairs; the artificial noise of
    ``sol`` is held fixed.  A log-spaced grid locates the first feasible
    factor, then bisection refines it against the preceding grid point.
    Returns an array of factors (NaN where no grid point is feasible).
    """
    an_only = CovarianceSolution([np.zeros_like(A) for A in sol.W_p], list(sol.Sigma_p),
                                 [np.zeros_like(A) for A in sol.W_s], sol.Sigma_s)
    base = power_terms(channels, an_only)
    full = _stack_terms([power_terms(channels, _beams_only(sol, wp, ws)) for wp, ws in candidates])
    slope = _sub_terms(full, base)
    base = _broadcast(base)

    def ok(c):
        terms = _affine_terms(base, slope, c)
        return margins_ok(constraint_margins(channels, terms, reqs, eh), tol_rate, tol_pow)

    C = len(candidates)
    levels = np.geomspace(c_min, c_max, grid)
    feas = np.array([np.broadcast_to(_quiet(ok, np.full(C, c)), (C,)) for c in levels])
    first = np.where(feas.any(axis=0), feas.argmax(axis=0), -1)
    out = np.full(C, np.nan)
    has = first >= 0
    if not has.any():
        return out
    hi = np.where(has, levels[np.maximum(first, 0)], np.nan)
    lo = np.where(first > 0, levels[np.maximum(first - 1, 0)], hi)
    active = has & (first > 0)
    for _ in range(bisections):
        if not active.any():
            break
        mid = np.where(active, np.sqrt(lo * hi), hi)
        good = np.broadcast_to(_quiet(ok, np.where(has, mid, 1.0)), (C,))
        hi = np.where(active & good, mid, hi)
        lo = np.where(active & ~good, mid, lo)
    out[has] = hi[has]
    return out


def _quiet(fn, *args):
    with np.errstate(divide="ignore", invalid="ignore"):
        try:
            return fn(*args)
        except NumericDomainError:   # a log argument at exactly zero on some candidate
            return False


def gaussian_randomization(sol: CovarianceSolution, channels: ChannelSet, reqs: QosRequirements,
                           eh: EhParams, trials: int = 1000, rng_seed=0,
                           normalize: bool = True) -> BeamformerSolution:
    """Draw w ~ CN(0, W) per information covariance and keep the cheapest repaired candidate.

    With ``normalize`` each draw is rescaled to ||w||^2 = Tr(W) before the
    common-factor search, so the relative power split of the relaxation is kept.
    """
    if trials < 1:
        raise RandomizationFailure("no randomization trials requested")
    rng = np.random.default_rng(rng_seed)
    W_all = list(sol.W_p) + list(sol.W_s)
    roots = []
    for W in W_all:
        vals, vecs = np.linalg.eigh(0.5 * (W + W.conj().T))
        roots.append(vecs * np.sqrt(np.clip(vals, 0.0, None)))
    M = len(sol.W_p)
    candidates = []
    for _ in range(trials):
        ws = []
        for W, R in zip(W_all, roots):
            n = R.shape[0]
            z = (rng.standard_normal(n) + 1j * rng.standard_normal(n)) / np.sqrt(2.0)
            w = R @ z
            if normalize:
                nrm = np.vdot(w, w).real
                tr = np.trace(W).real
                w = w * np.sqrt(tr / nrm) if nrm > 0 else w
            ws.append(w)
        candidates.append((ws[:M], ws[M:]))
    # factors below 1 would undercut the relaxation bound on the information-beam power
    scales = smallest_feasible_scale(channels, sol, candidates, reqs, eh, c_min=1.0, c_max=1e3, grid=91)
    beam_power = np.array([sum(np.vdot(w, w).real for w in wp + ws) for wp, ws in candidates])
    cost = scales * beam_power
    if not np.any(np.isfinite(cost)):
        raise RandomizationFailure(f"no feasible candidate in {trials} draws")
    best = int(np.nanargmin(cost))
    c = float(scales[best])
    wp, ws = candidates[best]
    r = np.sqrt(c)
    return BeamformerSolution([r * w for w in wp], [r * w for w in ws], list(sol.Sigma_p),
                              sol.Sigma_s, "randomized", c)


def extract_beamformers(sol: CovarianceSolution, channels: ChannelSet, reqs: QosRequirements,
                        eh: EhParams, rank_tolerance: float = 1e-6, trials: int = 1000,
                        rng_seed=0) -> BeamformerSolution:
    """Eigenvector extraction when every information covariance is rank-one, randomization otherwise.

    An eigen-extracted point that misses a constraint by dropping its
    lambda_2 residue gets the same common-factor repair as a random draw.
    """
    W_all = list(sol.W_p) + list(sol.W_s)
    if all(rank_one_measure(W) <= rank_tolerance for W in W_all):
        M = len(sol.W_p)
        ws = [principal_beamformer(W) for W in W_all]
        out = BeamformerSolution(ws[:M], ws[M:], list(sol.Sigma_p), sol.Sigma_s, "eigen", 1.0)
        margins = constraint_margins(channels, power_terms(channels, out.covariances()), reqs, eh)
        if margins_ok(margins, 0.0, 0.0):
            return out
        c = smallest_feasible_scale(channels, sol, [(ws[:M], ws[M:])], reqs, eh, c_min=1.0,
                                    c_max=1.0 + 1e-3)[0]
        if np.isfinite(c):
            r = np.sqrt(c)
            return BeamformerSolution([r * w for w in ws[:M]], [r * w for w in ws[M:]],
                                      list(sol.Sigma_p), sol.Sigma_s, "eigen", float(c))
    return gaussian_randomization(sol, channels, reqs, eh, trials, rng_seed)
