"""Discretized gradient flow and the monitors tracking its convergence proof"""

import csv
import math
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np
from rich.console import Console

from .config import (
    DECAY_SLACK,
    DEFAULT_KERNEL_LOG_EVERY,
    FD_ETA,
    MONOTONE_ATOL,
    MONOTONE_RTOL,
    SERIAL_DIGITS,
)
from .dataset import TrainingSet
from .errors import DivergenceError, InsufficientDataError, InvalidInputError, StepSizeError
from .linalg_core import frobenius_distance, lambda_max, lambda_min
from .network import NetParams, activation_pattern, preactivations
from .ntk_kernel import KernelMatrix, kernel_at, lift_params
from .sobolev_loss import (
    LossGradient,
    ResidualState,
    gradient_from_residuals,
    loss_gradient,
    residuals,
)

console = Console(stderr=True)

INTEGRATORS = ("euler", "heun")

CSV_HEADER = [
    "step", "t", "loss", "e_norm", "S_norm", "r_sq",
    "max_drift", "R_bound", "kernel_drift", "lambda_min_H", "flip_count",
]


@dataclass(frozen=True)
class FlowConfig:
    eta: float
    steps: int
    log_every: int = 1
    kernel_log_every: int = DEFAULT_KERNEL_LOG_EVERY
    integrator: str = "euler"
    seed: int = 0
    allow_large_step: bool = False

    def __post_init__(self):
        if not (math.isfinite(self.eta) and self.eta > 0):
            raise InvalidInputError(f"eta must be positive and finite, got {self.eta}")
        if self.steps < 1:
            raise InvalidInputError(f"steps must be >= 1, got {self.steps}")
        if self.log_every < 1 or self.kernel_log_every < 0:
            raise InvalidInputError("log_every must be >= 1 and kernel_log_every >= 0")
        if self.integrator not in INTEGRATORS:
            raise InvalidInputError(f"Unknown integrator {self.integrator!r}; choose from {', '.join(INTEGRATORS)}")


@dataclass(frozen=True)
class TrajectoryRecord:
    step: int
    t: float
    loss: float
    e_norm: float
    S_norm: float
    r_sq: float
    max_drift: float
    R_bound: Optional[float]
    kernel_drift: Optional[float]
    lambda_min_H: Optional[float]
    flip_count: int


@dataclass(frozen=True)
class FlipJump:
    """Residual change at a step whose update moved units across their kink"""

    step: int
    flips: int
    r_sq_change: float


@dataclass(frozen=True)
class FlowResult:
    """Final parameters, logged records and the flip bookkeeping of one run.

    `jump_free_r_sq` runs alongside `records`: r_sq(0) multiplied by each
    step's contraction on its own activation region. It tracks r_sq up to
    rounding until the first flip jump and is what the residual dynamics
    dr/dt = -H r govern.
    """

    params: NetParams
    records: List[TrajectoryRecord]
    step_cap: float
    trace_cap: float
    lambda_max_H0: float
    lambda_min_H0: float
    monotone: bool = True
    jump_free_r_sq: List[float] = field(default_factory=list)
    jumps: List[FlipJump] = field(default_factory=list)

    @property
    def initial_loss(self) -> float:
        return self.records[0].loss

    @property
    def final_loss(self) -> float:
        return self.records[-1].loss

    @property
    def jump_r_sq(self) -> float:
        return float(sum(j.r_sq_change for j in self.jumps))


@dataclass(frozen=True)
class DecayCertificate:
    lambda_hat_rate: float
    passed: bool


def trace_cap(n: int, k: int) -> float:
    """1/(2 n(k+1)), the cap implied by the trace bound on lambda_max(H)"""
    return 1.0 / (2.0 * n * (k + 1))


def step_cap(p: NetParams, ts: TrainingSet) -> float:
    """1/(2 lambda_max(H(p))), the largest step the trainer accepts without override"""
    top = lambda_max(kernel_at(p, ts).H)
    return math.inf if top <= 0 else 1.0 / (2.0 * top)


def lemma4_radius(lambda_star: float, n: int, k: int, m: int, e0_norm: float, S0_norm: float) -> float:
    """R = (4/lambda*) sqrt(kn/m) (|e(0)| + |S(0)|); k = 0 uses the value-only factor sqrt(n/m)"""
    if lambda_star <= 0:
        raise InvalidInputError(f"lambda* must be positive, got {lambda_star}")
    return 4.0 / lambda_star * math.sqrt(max(k, 1) * n / m) * (e0_norm + S0_norm)


def kernel_drift_bound(n: int, k: int, m: int, R: float, delta: float) -> float:
    """High-probability bound 16 n^2 k R / (sqrt(2 pi) delta) + 8 n^2 / m on |H(t) - H(0)|_F"""
    return 16.0 * n ** 2 * max(k, 1) * R / (math.sqrt(2.0 * math.pi) * delta) + 8.0 * n ** 2 / m


def flip_fraction_bound(R: float) -> float:
    """Probability bound 2R/sqrt(2 pi) on |w_r(0)^T x_i| <= R"""
    return 2.0 * R / math.sqrt(2.0 * math.pi)


def neuron_drift(p0: NetParams, p: NetParams) -> np.ndarray:
    """|w_r - w_r(0)| per neuron; the bias net measures [w_r; b_r]"""
    return np.linalg.norm(lift_params(p).W - lift_params(p0).W, axis=1)


def activation_flips(p0: NetParams, p: NetParams, ts: TrainingSet) -> np.ndarray:
    """Boolean (n, m) array of sigma'(.) changes relative to p0"""
    return activation_pattern(p, ts.x) != activation_pattern(p0, ts.x)


def flip_event_inclusion(p0: NetParams, p: NetParams, ts: TrainingSet) -> bool:
    """A flipped pair (i, r) always has |pre-activation at p0| <= |drift of neuron r|"""
    flipped = activation_flips(p0, p, ts)
    if not flipped.any():
        return True
    slack = np.abs(preactivations(p0, ts.x)) - neuron_drift(p0, p)[None, :]
    return bool(np.all(slack[flipped] <= 1e-12))


def _euler_update(p: NetParams, grad: LossGradient, eta: float) -> NetParams:
    b = p.b - eta * grad.db if p.has_bias else None
    return p.with_weights(p.W - eta * grad.dW, b)


def _heun_update(p: NetParams, ts: TrainingSet, grad: LossGradient, eta: float, pattern: np.ndarray) -> NetParams:
    """Heun step with both slopes taken on the step-start activation region"""
    point = _euler_update(p, grad, eta)
    trial = gradient_from_residuals(point, ts, residuals(point, ts, pattern), pattern)
    dW = 0.5 * (grad.dW + trial.dW)
    db = 0.5 * (grad.db + trial.db) if p.has_bias else None
    return _euler_update(p, LossGradient(dW=dW, db=db), eta)


def _make_record(
    step: int,
    eta: float,
    res: ResidualState,
    p0: NetParams,
    p: NetParams,
    ts: TrainingSet,
    R: Optional[float],
    H0: Optional[KernelMatrix],
    with_kernel: bool,
) -> TrajectoryRecord:
    drift = kernel_min = None
    if with_kernel:
        H = kernel_at(p, ts)
        drift = frobenius_distance(H.H, H0.H)
        kernel_min = lambda_min(H.H)
    e_norm, S_norm = res.e_norm, res.S_norm
    return TrajectoryRecord(
        step=step,
        t=step * eta,
        loss=res.loss,
        e_norm=e_norm,
        S_norm=S_norm,
        r_sq=e_norm ** 2 + S_norm ** 2,
        max_drift=float(neuron_drift(p0, p).max()),
        R_bound=R,
        kernel_drift=drift,
        lambda_min_H=kernel_min,
        flip_count=int(activation_flips(p0, p, ts).sum()),
    )


def run_flow(
    p0: NetParams,
    ts: TrainingSet,
    cfg: FlowConfig,
    lambda_star: Optional[float] = None,
) -> FlowResult:
    """Integrate dW/dt = -grad L from p0 for cfg.steps steps of size cfg.eta.

    Records are taken at step 0, every log_every steps, every kernel_log_every
    steps (with kernel fields) and at the final step. With lambda_star the
    records carry the drift radius R computed from the step-0 residuals.

    A step is split into its move on the step-start activation region, where
    the residual is affine and contracts as r -> (I - eta H) r, and the jump
    of the directional outputs at units that crossed their kink. The loss must
    not increase over the first part; the second is recorded as a FlipJump.
    """
    H0 = kernel_at(p0, ts)
    top = lambda_max(H0.H)
    cap = math.inf if top <= 0 else 1.0 / (2.0 * top)
    if cfg.eta > cap:
        if not cfg.allow_large_step:
            raise StepSizeError("Step size above 1/(2 lambda_max(H(0)))", cfg.eta, cap)
        console.print(f"[yellow]Warning: eta={cfg.eta:.6g} exceeds the step cap {cap:.6g}; continuing[/yellow]")

    res = residuals(p0, ts)
    R = None
    if lambda_star is not None:
        R = lemma4_radius(lambda_star, ts.n, ts.k, p0.m, res.e_norm, res.S_norm)

    def wants_kernel(step: int) -> bool:
        return cfg.kernel_log_every > 0 and (step % cfg.kernel_log_every == 0 or step == cfg.steps)

    p = p0
    last = _make_record(0, cfg.eta, res, p0, p, ts, R, H0, wants_kernel(0))
    records = [last]
    flow_sq = last.r_sq
    jump_free = [flow_sq]
    jumps: List[FlipJump] = []
    monotone = True
    for step in range(1, cfg.steps + 1):
        pattern = activation_pattern(p, ts.x)
        grad = gradient_from_residuals(p, ts, res, pattern)
        try:
            if cfg.integrator == "euler":
                candidate = _euler_update(p, grad, cfg.eta)
            else:
                candidate = _heun_update(p, ts, grad, cfg.eta, pattern)
        except InvalidInputError as e:
            # weights overflowed
            raise DivergenceError(f"Non-finite parameters at step {step}", last_record=last) from e
        new_res = residuals(candidate, ts)
        if not math.isfinite(new_res.loss):
            raise DivergenceError(f"Non-finite loss at step {step}", last_record=last)

        flips = int(np.count_nonzero(activation_pattern(candidate, ts.x) != pattern))
        frozen = residuals(candidate, ts, pattern) if flips else new_res
        if frozen.loss > res.loss * (1.0 + MONOTONE_RTOL) + MONOTONE_ATOL:
            if not cfg.allow_large_step:
                raise StepSizeError(
                    f"Loss increased at step {step} from {res.loss:.6g} to {frozen.loss:.6g}", cfg.eta, cap
                )
            if monotone:
                console.print(f"[yellow]Warning: loss increased at step {step}[/yellow]")
            monotone = False
        if flips:
            jumps.append(FlipJump(step=step, flips=flips, r_sq_change=new_res.squared_norm - frozen.squared_norm))
        if res.squared_norm > 0:
            flow_sq *= frozen.squared_norm / res.squared_norm

        p, res = candidate, new_res
        kernel_now = wants_kernel(step)
        if kernel_now or step % cfg.log_every == 0 or step == cfg.steps:
            last = _make_record(step, cfg.eta, res, p0, p, ts, R, H0, kernel_now)
            records.append(last)
            jump_free.append(flow_sq)

    return FlowResult(
        params=p,
        records=records,
        step_cap=cap,
        trace_cap=trace_cap(ts.n, ts.k),
        lambda_max_H0=top,
        lambda_min_H0=lambda_min(H0.H),
        monotone=monotone,
        jump_free_r_sq=jump_free,
        jumps=jumps,
    )


def dynamics_residual_check(p: NetParams, ts: TrainingSet, eta_fd: float = FD_ETA) -> float:
    """|dr/dt (forward difference over one Euler substep) + H(p) r|.

    Between activation flips r is affine in the parameters, so the value is
    rounding-level unless the substep crosses a kink.
    """
    res = residuals(p, ts)
    moved = residuals(_euler_update(p, gradient_from_residuals(p, ts, res), eta_fd), ts)
    H = kernel_at(p, ts).H.entries
    rate = (moved.stacked - res.stacked) / eta_fd
    return float(np.linalg.norm(rate + H @ res.stacked))


def stencil_has_flip(p: NetParams, ts: TrainingSet, eta_fd: float = FD_ETA) -> bool:
    """Whether one Euler substep of size eta_fd changes any activation"""
    moved = _euler_update(p, loss_gradient(p, ts), eta_fd)
    return bool(activation_flips(p, moved, ts).any())


def _require_records(
    records: Sequence[TrajectoryRecord], r_sq: Optional[Sequence[float]] = None
) -> List[float]:
    """The residual series to test: `r_sq` when given, else the records' own r_sq"""
    if not records:
        raise InsufficientDataError("No trajectory records")
    if records[0].step != 0:
        raise InsufficientDataError("Trajectory does not start at step 0")
    if r_sq is None:
        return [r.r_sq for r in records]
    if len(r_sq) != len(records):
        raise InvalidInputError(f"Got {len(r_sq)} residual values for {len(records)} records")
    return [float(v) for v in r_sq]


def decay_certificate(
    records: Sequence[TrajectoryRecord],
    slack: float = DECAY_SLACK,
    r_sq: Optional[Sequence[float]] = None,
) -> DecayCertificate:
    """r_sq(t) <= slack exp(-lambda_hat t) r_sq(0) with lambda_hat the smallest logged lambda_min(H).

    `r_sq` replaces the records' residuals, e.g. with FlowResult.jump_free_r_sq.
    """
    series = _require_records(records, r_sq)
    logged = [r.lambda_min_H for r in records if r.lambda_min_H is not None]
    if not logged:
        raise InsufficientDataError("Decay certificate needs logged lambda_min(H); set kernel_log_every > 0")
    lam = min(logged)
    passed = all(v <= slack * math.exp(-lam * r.t) * series[0] for r, v in zip(records, series))
    return DecayCertificate(lambda_hat_rate=lam, passed=passed)


def observed_decay_rate(records: Sequence[TrajectoryRecord], r_sq: Optional[Sequence[float]] = None) -> float:
    """min over logged t > 0 of -ln(r_sq(t)/r_sq(0))/t"""
    series = _require_records(records, r_sq)
    later = [(r.t, v) for r, v in zip(records, series) if r.t > 0]
    if not later:
        raise InsufficientDataError("Need at least one record after t = 0")
    start = series[0]
    if start == 0:
        return math.inf
    return min(math.inf if v == 0 else -math.log(v / start) / t for t, v in later)


def drift_monitor(records: Sequence[TrajectoryRecord], lemma4_R: float) -> bool:
    return all(r.max_drift <= lemma4_R for r in records)


def escape_monitor(records: Sequence[TrajectoryRecord], lambda_hat_star: float) -> float:
    """First logged t with kernel drift above lambda*/4, or inf"""
    logged = [r for r in records if r.kernel_drift is not None]
    if not logged:
        raise InsufficientDataError("Escape monitor needs logged kernel drift")
    for r in logged:
        if r.kernel_drift > lambda_hat_star / 4.0:
            return r.t
    return math.inf


def _csv_field(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return format(float(value), f".{SERIAL_DIGITS}g")


def write_trajectory_csv(records: Sequence[TrajectoryRecord], path: Path) -> None:
    names = [f.name for f in fields(TrajectoryRecord)]
    assert names == CSV_HEADER
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for record in records:
            writer.writerow([_csv_field(getattr(record, name)) for name in CSV_HEADER])


def read_trajectory_csv(path: Path) -> List[TrajectoryRecord]:
    """Parse a trajectory written by write_trajectory_csv"""
    records = []
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames != CSV_HEADER:
            raise InvalidInputError(f"{path}: unexpected header {reader.fieldnames}")
        for row in reader:
            opt = {key: (float(row[key]) if row[key] else None) for key in ("R_bound", "kernel_drift", "lambda_min_H")}
            records.append(TrajectoryRecord(
                step=int(row["step"]),
                t=float(row["t"]),
                loss=float(row["loss"]),
                e_norm=float(row["e_norm"]),
                S_norm=float(row["S_norm"]),
                r_sq=float(row["r_sq"]),
                max_drift=float(row["max_drift"]),
                flip_count=int(row["flip_count"]),
                **opt,
            ))
    return records
