"""Sparse regression for thrust dynamics structure discovery.

Candidate right-hand sides are monomials T^i * Td^j * u^k up to a total
degree bound; sequential thresholded least squares then prunes the library
down to the few terms that carry the dynamics.  Thresholding happens on
standardized coefficients (each column scaled to unit RMS, the target scaled
by its own RMS) so one cutoff works across thrust in newtons and throttle in
percent; reported coefficients are un-standardized.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations_with_replacement

import numpy as np
from numba import njit
from scipy.linalg import lstsq

from .errors import (AllTermsEliminated, MalformedFile, MissingDerivatives,
                     ShapeMismatch)
from .filtering import SgConfig, savgol_derivatives
from .simulation import ConditionReport, TimeSeries, excitation_rank_check

__all__ = [
    "LibrarySpec",
    "SparseModel",
    "monomial_exponents",
    "build_library",
    "stls",
    "identify_structure",
    "eval_sparse_model",
    "compile_accel",
    "simulate_sparse",
    "sparse_validation_mae",
    "sparse_model_to_text",
    "sparse_model_from_text",
]


@dataclass(frozen=True)
class LibrarySpec:
    """Monomial library in (T, Td, u) up to a total degree."""

    max_total_degree: int = 5

    def __post_init__(self):
        if self.max_total_degree < 1:
            raise ShapeMismatch("max_total_degree must be >= 1")

    @property
    def n_terms(self) -> int:
        d = self.max_total_degree
        return (d + 1) * (d + 2) * (d + 3) // 6


def monomial_exponents(spec: LibrarySpec) -> list[tuple[int, int, int]]:
    """Exponent triples (i, j, k) for T^i * Td^j * u^k, constant term first.

    Ordered by total degree, then lexicographically, so the layout is
    deterministic across runs.
    """
    exps = []
    for total in range(spec.max_total_degree + 1):
        block = set()
        for combo in combinations_with_replacement(range(3), total):
            i = combo.count(0)
            j = combo.count(1)
            k = combo.count(2)
            block.add((i, j, k))
        exps.extend(sorted(block))
    return exps


def build_library(ts: TimeSeries, spec: LibrarySpec) -> tuple[np.ndarray, np.ndarray]:
    """Regression matrix Theta and target y = Tdd from a filtered dataset.

    The dataset must already carry derivative columns (run
    savgol_derivatives first, or use a truth trace).
    """
    if ts.T_dot is None or ts.T_ddot is None:
        raise MissingDerivatives("dataset lacks T_dot/T_ddot columns")
    exps = monomial_exponents(spec)
    n = ts.n
    theta = np.empty((n, len(exps)))
    # Precompute the needed powers once; degree 5 keeps this tiny.
    d = spec.max_total_degree
    powT = [np.ones(n)]
    powD = [np.ones(n)]
    powU = [np.ones(n)]
    for _ in range(d):
        powT.append(powT[-1] * ts.T)
        powD.append(powD[-1] * ts.T_dot)
        powU.append(powU[-1] * ts.u)
    for col, (i, j, k) in enumerate(exps):
        theta[:, col] = powT[i] * powD[j] * powU[k]
    return theta, ts.T_ddot.copy()


@dataclass
class SparseModel:
    """Result of a sparse fit: kept terms and diagnostics."""

    exponents: list[tuple[int, int, int]]
    coefficients: np.ndarray          # full-length, zeros on pruned terms
    active: np.ndarray                # boolean mask over the library
    threshold: float
    residual_rms: float
    iterations: int
    rank: int                         # numerical rank of the active regressor
    condition_number: float

    @property
    def n_active(self) -> int:
        return int(np.sum(self.active))

    def active_terms(self) -> list[tuple[tuple[int, int, int], float]]:
        return [(e, float(c)) for e, c, a in
                zip(self.exponents, self.coefficients, self.active) if a]


def _rms(x: np.ndarray) -> float:
    return float(np.sqrt(np.mean(x * x)))


def stls(theta: np.ndarray, y: np.ndarray, threshold: float,
         exponents: list[tuple[int, int, int]] | None = None,
         max_iter: int = 25, ridge: float = 0.0) -> SparseModel:
    """Sequential thresholded least squares.

    Columns are scaled to unit RMS and the target to its RMS before
    thresholding, so `threshold` cuts on dimensionless coefficients; the
    returned coefficients are back in natural units.  Iterates least-squares
    fit and pruning until the active set stops changing (a fixed point:
    re-running thresholding on the result removes nothing).

    Powers of a positive bounded signal are nearly collinear, so a plain
    fit spreads weight across look-alike columns and thresholding cannot
    order them.  A nonzero `ridge` penalizes that spread inside the pruning
    loop (the penalty applies to the standardized coefficients); the final
    coefficients are always refit without the penalty on the surviving
    terms, so ridge influences selection only, not the reported values.

    Least squares uses a rank-revealing pivoted factorization; the numerical
    rank and condition number of the final active regressor are reported
    rather than raised, a rank-deficient library is a warning-level
    condition.  Raises AllTermsEliminated if pruning empties the model.
    """
    theta = np.asarray(theta, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    if theta.ndim != 2 or theta.shape[0] != y.size:
        raise ShapeMismatch(f"theta {theta.shape} does not match y ({y.size},)")
    if threshold < 0.0:
        raise ShapeMismatch("threshold must be non-negative")
    if ridge < 0.0:
        raise ShapeMismatch("ridge must be non-negative")
    n, p = theta.shape
    if exponents is None:
        exponents = [(0, 0, idx) for idx in range(p)]
    if len(exponents) != p:
        raise ShapeMismatch(f"{len(exponents)} exponent triples for {p} columns")

    col_rms = np.sqrt(np.mean(theta * theta, axis=0))
    col_rms[col_rms == 0.0] = 1.0
    y_rms = _rms(y)
    if y_rms == 0.0:
        y_rms = 1.0
    theta_s = theta / col_rms
    y_s = y / y_rms

    def fit(mask: np.ndarray) -> np.ndarray:
        sub = theta_s[:, mask]
        if ridge > 0.0:
            gram = sub.T @ sub / n + ridge * np.eye(int(np.sum(mask)))
            return np.linalg.solve(gram, sub.T @ y_s / n)
        sol, _, _, _ = lstsq(sub, y_s, lapack_driver="gelsy")
        return sol

    active = np.ones(p, dtype=bool)
    iterations = 0
    for iterations in range(1, max_iter + 1):
        coef_s = np.zeros(p)
        coef_s[active] = fit(active)
        new_active = np.abs(coef_s) >= threshold
        if not new_active.any():
            raise AllTermsEliminated(
                f"threshold {threshold} removed every term")
        if new_active.tolist() == active.tolist():
            break
        active = new_active
    # Unpenalized refit on the surviving set (also covers an iteration-cap
    # exit, where coef_s would otherwise lag the last pruning).
    sol, _, _, _ = lstsq(theta_s[:, active], y_s, lapack_driver="gelsy")
    coef_s = np.zeros(p)
    coef_s[active] = sol

    sub = theta_s[:, active]
    sv = np.linalg.svd(sub, compute_uv=False)
    cond = math.inf if sv[-1] == 0.0 else float(sv[0] / sv[-1])
    rank = int(np.sum(sv > max(n, int(np.sum(active))) * np.finfo(float).eps * sv[0]))

    coefficients = coef_s * y_rms / col_rms
    coefficients[~active] = 0.0
    residual = y - theta @ coefficients
    return SparseModel(exponents=list(exponents), coefficients=coefficients,
                       active=active, threshold=threshold,
                       residual_rms=_rms(residual), iterations=iterations,
                       rank=rank, condition_number=cond)


def identify_structure(ts: TimeSeries, sg: SgConfig = SgConfig(),
                       library: LibrarySpec = LibrarySpec(),
                       threshold: float = 0.05,
                       max_rows: int = 150_000,
                       ridge: float = 0.0) -> tuple[SparseModel, ConditionReport]:
    """Full structure-discovery pipeline on a raw dataset.

    Smooths and differentiates the measured thrust, builds the monomial
    library, rank-checks it, and runs sequential thresholding.  Records
    longer than max_rows enter the library strided down to at most that
    many evenly spaced rows (smoothing still sees every sample).  Returns
    the sparse model together with the library's conditioning report so
    callers can surface poor excitation.
    """
    filtered = savgol_derivatives(ts, sg)
    stride = max(1, -(-filtered.n // max_rows))
    if stride > 1:
        filtered = TimeSeries(t=filtered.t[::stride], u=filtered.u[::stride],
                              T=filtered.T[::stride],
                              T_dot=filtered.T_dot[::stride],
                              T_ddot=filtered.T_ddot[::stride])
    theta, y = build_library(filtered, library)
    report = excitation_rank_check(theta)
    model = stls(theta, y, threshold, exponents=monomial_exponents(library),
                 ridge=ridge)
    return model, report


def eval_sparse_model(model: SparseModel, T, Td, u):
    """Evaluate the identified right-hand side at given (T, Td, u).

    Accepts scalars or arrays; broadcasts elementwise.
    """
    T = np.asarray(T, dtype=float)
    Td = np.asarray(Td, dtype=float)
    u = np.asarray(u, dtype=float)
    out = np.zeros(np.broadcast(T, Td, u).shape)
    for (i, j, k), coeff in model.active_terms():
        out = out + coeff * T**i * Td**j * u**k
    return out if out.shape else float(out)


def compile_accel(model: SparseModel):
    """Compile the active terms into a fast scalar accel(T, Td, u) callable.

    Resimulating a sparse model calls the right-hand side millions of times,
    so the term sum is generated as straight-line Python once instead of
    looping over exponent tuples per call.
    """
    terms = model.active_terms()
    if not terms:
        raise AllTermsEliminated("sparse model has no active terms")
    max_pow = {"T": 1, "Td": 1, "u": 1}
    for (i, j, k), _ in terms:
        max_pow["T"] = max(max_pow["T"], i)
        max_pow["Td"] = max(max_pow["Td"], j)
        max_pow["u"] = max(max_pow["u"], k)
    lines = ["def _accel(T, Td, u):"]
    for name in ("T", "Td", "u"):
        for e in range(2, max_pow[name] + 1):
            prev = name if e == 2 else f"{name}{e - 1}"
            lines.append(f"    {name}{e} = {prev} * {name}")

    def factor(name: str, e: int) -> str:
        if e == 0:
            return ""
        return name if e == 1 else f"{name}{e}"

    pieces = []
    for (i, j, k), coeff in terms:
        factors = [f for f in (factor("T", i), factor("Td", j), factor("u", k)) if f]
        pieces.append(" * ".join([f"({coeff!r})"] + factors))
    lines.append("    return " + " + ".join(pieces))
    namespace: dict = {}
    exec("\n".join(lines), namespace)
    return namespace["_accel"]


@njit(cache=True)
def _rk4_sparse(u, dt, nsub, T0, Td0, ie, je, ke, co, dmax):  # pragma: no cover
    """RK4 sweep over a monomial right-hand side.

    Same integration scheme as the generic simulate_accel loop (the test
    suite pins the two against each other); exists because resimulating a
    campaign through an interpreted polynomial is painfully slow.  Returns
    (T trace, index of first non-finite sample or -1).
    """
    n = u.shape[0]
    h = dt / nsub
    T_out = np.empty(n)
    m = co.shape[0]
    pT = np.empty(dmax + 1)
    pD = np.empty(dmax + 1)
    pU = np.empty(dmax + 1)
    pT[0] = 1.0
    pD[0] = 1.0
    pU[0] = 1.0
    T = T0
    Td = Td0
    for k in range(n):
        uk = u[k]
        if not (np.isfinite(T) and np.isfinite(Td)):
            return T_out, k
        T_out[k] = T
        for d in range(1, dmax + 1):
            pU[d] = pU[d - 1] * uk
        for _ in range(nsub):
            # k1
            for d in range(1, dmax + 1):
                pT[d] = pT[d - 1] * T
                pD[d] = pD[d - 1] * Td
            k1D = 0.0
            for t in range(m):
                k1D += co[t] * pT[ie[t]] * pD[je[t]] * pU[ke[t]]
            k1T = Td
            T2 = T + 0.5 * h * k1T
            D2 = Td + 0.5 * h * k1D
            for d in range(1, dmax + 1):
                pT[d] = pT[d - 1] * T2
                pD[d] = pD[d - 1] * D2
            k2D = 0.0
            for t in range(m):
                k2D += co[t] * pT[ie[t]] * pD[je[t]] * pU[ke[t]]
            k2T = D2
            T3 = T + 0.5 * h * k2T
            D3 = Td + 0.5 * h * k2D
            for d in range(1, dmax + 1):
                pT[d] = pT[d - 1] * T3
                pD[d] = pD[d - 1] * D3
            k3D = 0.0
            for t in range(m):
                k3D += co[t] * pT[ie[t]] * pD[je[t]] * pU[ke[t]]
            k3T = D3
            T4 = T + h * k3T
            D4 = Td + h * k3D
            for d in range(1, dmax + 1):
                pT[d] = pT[d - 1] * T4
                pD[d] = pD[d - 1] * D4
            k4D = 0.0
            for t in range(m):
                k4D += co[t] * pT[ie[t]] * pD[je[t]] * pU[ke[t]]
            k4T = D4
            T = T + h / 6.0 * (k1T + 2.0 * k2T + 2.0 * k3T + k4T)
            Td = Td + h / 6.0 * (k1D + 2.0 * k2D + 2.0 * k3D + k4D)
    return T_out, -1


def simulate_sparse(model: SparseModel, u: np.ndarray, dt: float,
                    T0: float = 0.0, Td0: float = 0.0,
                    substeps: int = 10) -> np.ndarray:
    """Thrust trace of a sparse model driven by a recorded throttle."""
    from .errors import NonFiniteState

    terms = model.active_terms()
    if not terms:
        raise AllTermsEliminated("sparse model has no active terms")
    exps = np.array([e for e, _ in terms], dtype=np.int64)
    co = np.array([c for _, c in terms])
    u = np.ascontiguousarray(np.asarray(u, dtype=float))
    T_out, bad = _rk4_sparse(u, dt, substeps, float(T0), float(Td0),
                             exps[:, 0], exps[:, 1], exps[:, 2], co,
                             int(exps.max()) if exps.size else 1)
    if bad >= 0:
        raise NonFiniteState(f"state not finite at sample {bad}", index=int(bad))
    return T_out


def sparse_validation_mae(model: SparseModel, ts: TimeSeries,
                          substeps: int = 10) -> float:
    """Open-loop resimulation error of a sparse model against a record.

    Mirrors the gray-box validation: integrate from the record's first
    thrust sample (zero rate) through the recorded throttle and average the
    absolute thrust error.  Divergence surfaces as NonFiniteState.
    """
    T_sim = simulate_sparse(model, ts.u, ts.dt, T0=float(ts.T[0]), Td0=0.0,
                            substeps=substeps)
    return float(np.mean(np.abs(T_sim - ts.T)))


def sparse_model_to_text(model: SparseModel) -> str:
    """One 'T^i * Td^j * u^k : coefficient' line per active term."""
    lines = [f"T^{i} * Td^{j} * u^{k} : {coeff!r}"
             for (i, j, k), coeff in model.active_terms()]
    return "\n".join(lines) + "\n"


def sparse_model_from_text(text: str) -> SparseModel:
    """Parse the sparse-model text format back into an evaluable model."""
    exps = []
    coeffs = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        try:
            term, _, value = line.partition(":")
            factors = [f.strip() for f in term.split("*")]
            if len(factors) != 3:
                raise ValueError("expected three monomial factors")
            powers = []
            for name, factor in zip(("T", "Td", "u"), factors):
                base, _, exp = factor.partition("^")
                if base.strip() != name:
                    raise ValueError(f"expected factor {name}, got {base.strip()!r}")
                powers.append(int(exp))
            coeffs.append(float(value.strip()))
            exps.append(tuple(powers))
        except ValueError as exc:
            raise MalformedFile(f"line {lineno}: {exc}", line=lineno) from None
    if not exps:
        raise MalformedFile("no terms in sparse model file")
    coeffs = np.array(coeffs)
    return SparseModel(exponents=exps, coefficients=coeffs,
                       active=np.ones(len(exps), dtype=bool), threshold=0.0,
                       residual_rms=float("nan"), iterations=0,
                       rank=len(exps), condition_number=float("nan"))
