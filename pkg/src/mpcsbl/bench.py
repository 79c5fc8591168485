"""Monte-Carlo experiment harness.

Every trial draws its own dictionary and signal from a child seed derived
from ``(base_seed, sweep index, beta index, method index, trial)``, so the
output depends only on the plan and never on how trials are scheduled.

Seed derivation (all arithmetic modulo 2**64)::

    mix(z):
        z = z + 0x9E3779B97F4A7C15
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
        z = (z ^ (z >> 27)) * 0x94D049BB133111EB
        return z ^ (z >> 31)

    child_seed(base, i_sweep, i_beta, i_method, trial):
        h = mix(base)
        for c in (i_sweep, i_beta, i_method, trial):
            h = mix(h ^ c)
        return h
"""

from __future__ import annotations

import csv
import io
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .datagen import GenSpec, gen_instance
from .model import NumericalError, SolverConfig
from .msbl import MsblConfig, run_msbl
from .solver import run_em

log = logging.getLogger(__name__)

MASK64 = (1 << 64) - 1
KINDS = ("ratio_sweep", "sparsity_sweep", "snr_sweep", "single")
METHODS = ("mpcsbl", "msbl")
NOISE_MODES = ("oracle", "learn")
# fixed noise precision for noiseless data under the oracle protocol
NOISELESS_LAMBDA = 1e8

AGGREGATE_HEADER = ["sweep_value", "beta", "method", "trials",
                    "success_rate", "mean_nmse"]
TRIAL_HEADER = ["seed", "sweep_value", "beta", "method", "nmse", "success",
                "iterations", "wall_ms"]


def mix64(z: int) -> int:
    """splitmix64 finaliser."""
    z = (z + 0x9E3779B97F4A7C15) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def child_seed(base_seed, i_sweep, i_beta, i_method, trial):
    h = mix64(base_seed & MASK64)
    for c in (i_sweep, i_beta, i_method, trial):
        h = mix64(h ^ (c & MASK64))
    return h


def nmse(x_hat, x_true):
    """``||x_hat - x_true||_F^2 / ||x_true||_F^2``."""
    x_true = np.asarray(x_true, dtype=float)
    energy = float(np.sum(x_true ** 2))
    if energy == 0.0:
        raise ValueError("NMSE is undefined for an all-zero reference")
    return float(np.sum((np.asarray(x_hat, dtype=float) - x_true) ** 2)) / energy


@dataclass(frozen=True)
class ExperimentPlan:
    """A grid of Monte-Carlo trials.

    ``noise`` selects how both methods treat the noise precision:
    ``"oracle"`` fixes it at the true ``1/sigma2`` of each trial
    (``NOISELESS_LAMBDA`` for noiseless data) and ``"learn"`` estimates it
    by EM starting from the automatic initial value.
    """

    kind: str
    base: GenSpec
    sweep_values: Tuple[float, ...]
    betas: Tuple[float, ...] = (0.0, 0.5, 1.0)
    methods: Tuple[str, ...] = METHODS
    trials: int = 100
    base_seed: int = 0
    success_nmse: float = 1e-4
    tol: float = 1e-6
    max_iter: int = 500
    noise: str = "oracle"
    # fast and dense E-steps agree to rounding; the fast one is far cheaper
    dense_cutoff: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown plan kind {self.kind!r}")
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        values = tuple(self.sweep_values)
        if not values or any(b <= a for a, b in zip(values, values[1:])):
            raise ValueError("sweep_values must be non-empty and strictly increasing")
        object.__setattr__(self, "sweep_values", values)
        betas = tuple(float(b) for b in self.betas)
        if any(not 0.0 <= b <= 1.0 for b in betas):
            raise ValueError("betas must lie in [0, 1]")
        object.__setattr__(self, "betas", betas)
        if not self.methods or any(m not in METHODS for m in self.methods):
            raise ValueError(f"methods must be a non-empty subset of {METHODS}")
        if self.noise not in NOISE_MODES:
            raise ValueError(f"noise must be one of {NOISE_MODES}")
        if not self.success_nmse > 0:
            raise ValueError("success_nmse must be > 0")


@dataclass(frozen=True)
class TrialRecord:
    seed: int
    sweep_value: float
    beta: Optional[float]  # None for methods without coupling (msbl)
    method: str
    nmse: float
    success: bool
    iterations: int
    wall_ms: float


@dataclass(frozen=True)
class AggregateRow:
    sweep_value: float
    beta: Optional[float]
    method: str
    trials: int
    success_rate: float
    mean_nmse: float
    nmse_sem: float


@dataclass
class PlanResult:
    records: List[TrialRecord] = field(default_factory=list)
    table: List[AggregateRow] = field(default_factory=list)

    def cell(self, sweep_value, method, beta=None) -> AggregateRow:
        for row in self.table:
            if (row.sweep_value == sweep_value and row.method == method
                    and row.beta == beta):
                return row
        raise KeyError((sweep_value, method, beta))


@dataclass(frozen=True)
class _Task:
    index: int
    seed: int
    sweep_value: float
    beta: Optional[float]
    method: str
    spec: GenSpec


def spec_for(plan: ExperimentPlan, value, seed) -> GenSpec:
    base = plan.base
    if plan.kind == "ratio_sweep":
        return replace(base, n=int(round(value * base.m)), seed=seed)
    if plan.kind == "sparsity_sweep":
        return replace(base, k=int(value), seed=seed)
    if plan.kind == "snr_sweep":
        return replace(base, snr_db=float(value), seed=seed)
    return replace(base, seed=seed)


def _method_cells(plan):
    """(method index, method, beta index, beta) in canonical order."""
    cells = []
    for ib, beta in enumerate(plan.betas):
        if "mpcsbl" in plan.methods:
            cells.append((METHODS.index("mpcsbl"), "mpcsbl", ib, beta))
    if "msbl" in plan.methods:
        cells.append((METHODS.index("msbl"), "msbl", 0, None))
    return cells


def _beta_key(beta):
    return -1.0 if beta is None else beta


def build_tasks(plan: ExperimentPlan) -> List[_Task]:
    tasks = []
    for isv, value in enumerate(plan.sweep_values):
        for im, method, ib, beta in _method_cells(plan):
            for t in range(plan.trials):
                seed = child_seed(plan.base_seed, isv, ib, im, t)
                tasks.append((value, _beta_key(beta), method, t,
                              seed, beta, spec_for(plan, value, seed)))
    tasks.sort(key=lambda r: r[:4])
    return [_Task(i, r[4], r[0], r[5], r[2], r[6]) for i, r in enumerate(tasks)]


def _noise_settings(plan, sigma2):
    if plan.noise == "learn":
        return True, "auto"
    lam = NOISELESS_LAMBDA if sigma2 == 0.0 else 1.0 / sigma2
    return False, lam


def run_trial(plan: ExperimentPlan, task: _Task) -> TrialRecord:
    t0 = time.perf_counter()
    iterations = 0
    try:
        inst, _, _, sigma2 = gen_instance(task.spec)
        learn, lam0 = _noise_settings(plan, sigma2)
        if task.method == "mpcsbl":
            cfg = SolverConfig(beta=task.beta, max_iter=plan.max_iter,
                               tol=plan.tol, noise_learning=learn,
                               lambda_init=lam0, dense_cutoff=plan.dense_cutoff)
            report = run_em(inst, cfg)
        else:
            cfg = MsblConfig(max_iter=plan.max_iter, tol=plan.tol,
                             noise_learning=learn, lambda_init=lam0)
            report = run_msbl(inst, cfg)
        iterations = report.iterations
        err = nmse(report.x_hat, inst.truth)
        if not math.isfinite(err):
            err = math.inf
    except (NumericalError, ValueError, np.linalg.LinAlgError) as exc:
        log.warning("trial seed=%d failed: %s", task.seed, exc)
        err = math.inf
    wall_ms = (time.perf_counter() - t0) * 1e3
    return TrialRecord(seed=task.seed, sweep_value=task.sweep_value,
                       beta=task.beta, method=task.method, nmse=err,
                       success=err <= plan.success_nmse,
                       iterations=iterations, wall_ms=wall_ms)


def _run_one(args):
    return run_trial(*args)


def aggregate(records: Sequence[TrialRecord]) -> List[AggregateRow]:
    groups = {}
    for rec in records:
        groups.setdefault((rec.sweep_value, _beta_key(rec.beta), rec.method),
                          []).append(rec)
    rows = []
    for key in sorted(groups):
        recs = groups[key]
        errs = np.array([r.nmse for r in recs])
        n = len(recs)
        if n < 2:
            sem = math.nan
        elif not np.all(np.isfinite(errs)):
            sem = math.inf  # failed trials carry inf NMSE
        else:
            sem = float(np.std(errs, ddof=1) / math.sqrt(n))
        rows.append(AggregateRow(
            sweep_value=key[0], beta=recs[0].beta, method=key[2], trials=n,
            success_rate=sum(r.success for r in recs) / n,
            mean_nmse=float(np.mean(errs)), nmse_sem=sem))
    return rows


def run_plan(plan: ExperimentPlan, workers: int = 1) -> PlanResult:
    """Run every trial of ``plan``; ``workers > 1`` uses a process pool.

    Records come back in canonical order (sweep value, beta, method, trial)
    whatever the worker count.
    """
    tasks = build_tasks(plan)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            chunk = max(1, len(tasks) // (4 * workers))
            records = list(pool.map(_run_one, [(plan, t) for t in tasks],
                                    chunksize=chunk))
    else:
        records = [run_trial(plan, t) for t in tasks]
    return PlanResult(records=records, table=aggregate(records))


def _fmt(x):
    if x is None:
        return ""
    if isinstance(x, bool):
        return "1" if x else "0"
    if isinstance(x, float):
        return format(x, ".17g")
    return str(x)


def aggregate_csv(result: PlanResult) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(AGGREGATE_HEADER)
    for row in result.table:
        w.writerow([_fmt(float(row.sweep_value)), _fmt(row.beta), row.method,
                    row.trials, _fmt(float(row.success_rate)),
                    _fmt(float(row.mean_nmse))])
    return buf.getvalue()


def trials_csv(result: PlanResult) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TRIAL_HEADER)
    for r in result.records:
        w.writerow([r.seed, _fmt(float(r.sweep_value)), _fmt(r.beta),
                    r.method, _fmt(float(r.nmse)), _fmt(bool(r.success)),
                    r.iterations, _fmt(float(r.wall_ms))])
    return buf.getvalue()
