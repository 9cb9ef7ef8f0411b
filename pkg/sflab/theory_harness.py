"""End-to-end verification experiments producing machine-readable verdicts"""

import math
import time
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import asdict, dataclass, field, fields
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from rich.console import Console
from scipy import stats

from . import __version__
from . import config
from .config import EXPERIMENT_DEFAULTS, MARGIN_STD_ERRORS, derive_seed
from .dataset import TARGET_KINDS, TrainingSet, generate, validate
from .errors import DivergenceError, InvalidInputError, StepSizeError
from .gradient_flow import (
    FlowConfig,
    FlowResult,
    decay_certificate,
    drift_monitor,
    escape_monitor,
    flip_event_inclusion,
    flip_fraction_bound,
    kernel_drift_bound,
    observed_decay_rate,
    run_flow,
)
from .linalg_core import gershgorin_lower_bound, lambda_min
from .network import bias_scaling, direction_gradients, forward_batch, init, param_jacobian_row
from .ntk_kernel import (
    chernoff_tail_bound,
    expected_M,
    gram_blocks,
    kernel_at,
    lemma2_width,
    neuron_kernel_norms,
    spectrum_report,
)
from .sobolev_loss import residuals

console = Console(stderr=True)

EXPERIMENTS = ("theorem1", "theorem2", "prop1", "lemmas")

LOSS_REDUCTION = 1e-8
FREQUENCY_CONFIDENCE = 0.05
CHERNOFF_EPS = 0.75


@dataclass(frozen=True)
class ExperimentConfig:
    which: str
    n: int = 8
    d: int = 16
    k: int = 2
    m: Optional[int] = None
    eta: float = 0.05
    steps: int = 4000
    delta: float = 0.1
    seeds: Tuple[int, ...] = (1,)
    mc_samples: int = 1_000_000
    target: str = "quadratic"
    m_multiplier: float = 1.0
    log_every: int = 50
    kernel_log_every: int = 50
    integrator: str = "euler"
    allow_large_step: bool = False
    antipodal: bool = True
    datasets: int = 20
    sweep_n: Tuple[int, ...] = (2, 4, 8)
    sweep_k: Tuple[int, ...] = (1, 2)
    sweep_tilt: Tuple[float, ...] = (0.0, 0.3)
    lemma1_width: int = 100
    lemma1_points: int = 100
    workers: int = 1

    def __post_init__(self):
        if self.which not in EXPERIMENTS:
            raise InvalidInputError(f"Unknown experiment {self.which!r}; choose from {', '.join(EXPERIMENTS)}")
        if not 0.0 < self.delta < 1.0:
            raise InvalidInputError(f"delta must lie in (0, 1), got {self.delta}")
        if not self.seeds:
            raise InvalidInputError("seeds must be non-empty")
        if any(s < 0 for s in self.seeds):
            raise InvalidInputError("seeds must be non-negative")
        if self.target not in TARGET_KINDS:
            raise InvalidInputError(f"Unknown target {self.target!r}")
        if self.m is not None and self.m < 1:
            raise InvalidInputError(f"m must be >= 1, got {self.m}")
        if self.kernel_log_every < 1:
            raise InvalidInputError("Experiments need kernel_log_every >= 1")
        if self.m_multiplier <= 0 or self.datasets < 1 or self.workers < 1:
            raise InvalidInputError("m_multiplier, datasets and workers must be positive")

    @classmethod
    def from_mapping(cls, which: str, mapping: Optional[Dict[str, Any]] = None) -> "ExperimentConfig":
        """Experiment defaults overlaid with `mapping`; unknown keys are rejected"""
        if which not in EXPERIMENT_DEFAULTS:
            raise InvalidInputError(f"Unknown experiment {which!r}; choose from {', '.join(EXPERIMENTS)}")
        known = {f.name for f in fields(cls)} - {"which"}
        values: Dict[str, Any] = {"mc_samples": config.MC_DEFAULT_SAMPLES, "workers": config.THREADS}
        values.update(EXPERIMENT_DEFAULTS[which])
        for key, value in (mapping or {}).items():
            if key == "which":
                if value != which:
                    raise InvalidInputError(f"Config is for experiment {value!r}, not {which!r}")
                continue
            if key not in known:
                raise InvalidInputError(f"Unknown config key {key!r}")
            values[key] = value
        for key in ("seeds", "sweep_n", "sweep_k", "sweep_tilt"):
            if key in values:
                values[key] = tuple(values[key])
        return cls(which=which, **values)

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        for key in ("seeds", "sweep_n", "sweep_k", "sweep_tilt"):
            data[key] = list(data[key])
        return data


@dataclass(frozen=True)
class Claim:
    name: str
    inequality: str
    measured: Dict[str, Any]
    margin_policy: str
    passed: bool
    provenance: str
    required: bool = True


@dataclass
class Verdict:
    experiment: str
    claims: List[Claim] = field(default_factory=list)
    environment: Dict[str, Any] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.claims if c.required)

    @property
    def failed_claims(self) -> List[Claim]:
        return [c for c in self.claims if c.required and not c.passed]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "experiment": self.experiment,
            "passed": self.passed,
            "claims": [asdict(c) for c in self.claims],
            "environment": self.environment,
        }


@dataclass(frozen=True)
class FrequencyTest:
    failures: int
    trials: int
    rate: float
    bound: float
    p_value: float
    passed: bool


def frequency_test(failures: int, trials: int, bound: float) -> FrequencyTest:
    """Exact one-sided binomial test of H0: failure rate <= bound; fails when p < 0.05"""
    if trials < 1:
        raise InvalidInputError("A frequency test needs at least one trial")
    bound = min(max(bound, 0.0), 1.0)
    p_value = float(stats.binomtest(failures, trials, bound, alternative='greater').pvalue)
    return FrequencyTest(
        failures=failures,
        trials=trials,
        rate=failures / trials,
        bound=bound,
        p_value=p_value,
        passed=p_value >= FREQUENCY_CONFIDENCE,
    )


def _run_seeds(fn: Callable[[int], List[Claim]], seeds: Sequence[int], workers: int) -> List[Claim]:
    """Run fn per seed in parallel and flatten the claims in seed order"""
    by_seed: Dict[int, List[Claim]] = {}
    with ThreadPoolExecutor(max_workers=max(1, min(workers, len(seeds)))) as executor:
        futures = {executor.submit(fn, seed): seed for seed in seeds}
        for future in as_completed(futures):
            by_seed[futures[future]] = future.result()

    claims = []
    for seed in sorted(by_seed):
        claims.extend(by_seed[seed])
    return claims


def _provenance(seed: int, **streams: int) -> str:
    parts = [f"seed={seed}"] + [f"{name}_seed={value}" for name, value in streams.items()]
    return " ".join(parts)


def _theorem_width(cfg: ExperimentConfig, lam: float, provenance: str) -> Tuple[int, Claim]:
    """Width for a theorem run plus an informational comparison with the concentration width"""
    width = lemma2_width(lam, cfg.n, cfg.k, cfg.delta) if lam > 0 else None
    if cfg.m is not None:
        m = cfg.m
    elif width is not None:
        m = int(math.ceil(cfg.m_multiplier * width))
    else:
        raise InvalidInputError("lambda* estimate is not positive; pass an explicit width m")
    if width is not None and m < width:
        console.print(f"[yellow]Warning: m={m} is below the concentration width {width} ({provenance})[/yellow]")
    claim = Claim(
        name="lemma2_width",
        inequality="m >= ceil((32/lambda*) n(k+1) ln(n(k+1)/delta))",
        measured={"m": m, "lemma2_width": width},
        margin_policy="informational",
        passed=width is not None and m >= width,
        provenance=provenance,
        required=False,
    )
    return m, claim


def _flow_claims(
    cfg: ExperimentConfig,
    ts: TrainingSet,
    flow: FlowResult,
    p0,
    lam: float,
    margin: float,
    provenance: str,
    tag: str,
    escape_required: bool = True,
) -> List[Claim]:
    """Claims read off one trajectory: loss reduction, decay, rate, escape time, drift"""
    records = flow.records
    claims = [
        Claim(
            name=f"loss_reduction{tag}",
            inequality="L(final) <= 1e-8 L(0)",
            measured={"initial_loss": flow.initial_loss, "final_loss": flow.final_loss},
            margin_policy="none",
            passed=flow.final_loss <= LOSS_REDUCTION * flow.initial_loss,
            provenance=provenance,
        )
    ]

    jumps = {"flip_jumps": len(flow.jumps), "jump_r_sq": flow.jump_r_sq}
    certificate = decay_certificate(records, r_sq=flow.jump_free_r_sq)
    claims.append(Claim(
        name=f"decay_certificate{tag}",
        inequality="rho(t) <= 1.05 exp(-lambda_hat t) rho(0), rho = jump-free r_sq, lambda_hat = min_t lambda_min(H(t))",
        measured={"lambda_hat_rate": certificate.lambda_hat_rate, **jumps},
        margin_policy="slack factor 1.05",
        passed=certificate.passed,
        provenance=provenance,
    ))
    raw = decay_certificate(records)
    claims.append(Claim(
        name=f"decay_certificate_with_jumps{tag}",
        inequality="r_sq(t) <= 1.05 exp(-lambda_hat t) r_sq(0) including flip jumps",
        measured={"lambda_hat_rate": raw.lambda_hat_rate, **jumps},
        margin_policy="informational (flip jumps are outside dr/dt = -H r)",
        passed=raw.passed,
        provenance=provenance,
        required=False,
    ))

    rate = observed_decay_rate(records, r_sq=flow.jump_free_r_sq)
    claims.append(Claim(
        name=f"pathwise_rate{tag}",
        inequality="min_t -ln(rho(t)/rho(0))/t >= lambda* - 3 se, rho = jump-free r_sq",
        measured={
            "observed_rate": rate,
            "observed_rate_with_jumps": observed_decay_rate(records),
            "lambda_star": lam,
            "eigen_margin": margin,
        },
        margin_policy="3 std errors against the claim",
        passed=rate >= lam - MARGIN_STD_ERRORS * margin,
        provenance=provenance,
    ))

    tau0 = escape_monitor(records, lam)
    max_kernel_drift = max(r.kernel_drift for r in records if r.kernel_drift is not None)
    claims.append(Claim(
        name=f"escape_time{tag}",
        inequality="|H(t) - H(0)|_F <= lambda*/4 at every logged t (tau0 = inf)",
        measured={"tau0": tau0, "max_kernel_drift": max_kernel_drift, "threshold": lam / 4.0},
        margin_policy="none",
        passed=math.isinf(tau0),
        provenance=provenance,
        required=escape_required,
    ))

    R = records[0].R_bound
    max_drift = max(r.max_drift for r in records)
    claims.append(Claim(
        name=f"neuron_drift{tag}",
        inequality="max_r |w_r(t) - w_r(0)| <= R = (4/lambda*) sqrt(kn/m) (|e(0)| + |S(0)|)",
        measured={"max_drift": max_drift, "R": R},
        margin_policy="none",
        passed=R is not None and drift_monitor(records, R),
        provenance=provenance,
    ))

    if R is not None:
        bound = kernel_drift_bound(ts.n, ts.k, p0.m, R, cfg.delta)
        claims.append(Claim(
            name=f"kernel_drift_bound{tag}",
            inequality="|H(t) - H(0)|_F <= 16 n^2 k R / (sqrt(2 pi) delta) + 8 n^2 / m",
            measured={"max_kernel_drift": max_kernel_drift, "bound": bound},
            margin_policy="informational (holds with probability 1 - delta)",
            passed=max_kernel_drift <= bound,
            provenance=provenance,
            required=False,
        ))
        flipped_fraction = records[-1].flip_count / (ts.n * p0.m)
        claims.append(Claim(
            name=f"flip_fraction{tag}",
            inequality="fraction of flipped (i, r) <= 2R/sqrt(2 pi)",
            measured={"flip_fraction": flipped_fraction, "bound": flip_fraction_bound(R)},
            margin_policy="informational (bound holds in expectation)",
            passed=flipped_fraction <= flip_fraction_bound(R),
            provenance=provenance,
            required=False,
        ))

    claims.append(Claim(
        name=f"flip_inclusion{tag}",
        inequality="flip(i, r) implies |w_r(0)^T x_i| <= |w_r(t) - w_r(0)|",
        measured={"flip_count": records[-1].flip_count},
        margin_policy="none",
        passed=flip_event_inclusion(p0, flow.params, ts),
        provenance=provenance,
    ))
    return claims


def _train_or_fail(
    cfg: ExperimentConfig,
    ts: TrainingSet,
    p0,
    seed: int,
    lam: float,
    margin: float,
    provenance: str,
    tag: str,
    escape_required: bool = True,
) -> List[Claim]:
    """Flow claims, or a single failed claim when training stops early"""
    try:
        flow = run_flow(p0, ts, _flow_config(cfg, seed), lambda_star=lam if lam > 0 else None)
    except (StepSizeError, DivergenceError) as e:
        console.print(f"[yellow]Warning: training stopped ({provenance}): {e}[/yellow]")
        return [Claim(
            name=f"training_completed{tag}",
            inequality="gradient descent runs all steps with monotone finite loss",
            measured={"error": type(e).__name__, "message": str(e), "m": p0.m},
            margin_policy="none",
            passed=False,
            provenance=provenance,
        )]
    return _flow_claims(cfg, ts, flow, p0, lam, margin, provenance, tag, escape_required)


def _flow_config(cfg: ExperimentConfig, seed: int) -> FlowConfig:
    return FlowConfig(
        eta=cfg.eta,
        steps=cfg.steps,
        log_every=cfg.log_every,
        kernel_log_every=cfg.kernel_log_every,
        integrator=cfg.integrator,
        seed=seed,
        allow_large_step=cfg.allow_large_step,
    )


def _environment(cfg: ExperimentConfig, started: float) -> Dict[str, Any]:
    return {
        "seeds": list(cfg.seeds),
        "mc_samples": cfg.mc_samples,
        "version": __version__,
        "runtime_seconds": time.monotonic() - started,
    }


def verify_theorem1(cfg: ExperimentConfig) -> Verdict:
    """Bias-free network: exponential residual decay at the kernel's rate"""
    started = time.monotonic()

    def run(seed: int) -> List[Claim]:
        data_seed, init_seed, mc_seed = (derive_seed(seed, s) for s in ("dataset", "init", "mc"))
        provenance = _provenance(seed, dataset=data_seed, init=init_seed, mc=mc_seed)
        ts = generate(cfg.n, cfg.d, cfg.k, cfg.target, data_seed)
        report, _ = spectrum_report(ts, cfg.mc_samples, mc_seed, bias=False, workers=1)
        lam, margin = report.lambda_min_estimate, report.std_error
        m, width_claim = _theorem_width(cfg, lam, provenance)
        p0 = init(m, cfg.d, cfg.k, False, init_seed)
        return [width_claim] + _train_or_fail(cfg, ts, p0, seed, lam, margin, provenance, f"[seed={seed}]")

    claims = _run_seeds(run, cfg.seeds, cfg.workers)
    return Verdict(experiment="theorem1", claims=claims, environment=_environment(cfg, started))


def verify_theorem2(cfg: ExperimentConfig) -> Verdict:
    """Bias network: convergence under the weaker separation assumption.

    With cfg.antipodal the first seed's dataset contains an exact antipodal
    pair; the bias-free kernel is reported on it for comparison.
    """
    started = time.monotonic()
    antipodal_seed = cfg.seeds[0] if cfg.antipodal else None

    def run(seed: int) -> List[Claim]:
        data_seed, init_seed, mc_seed = (derive_seed(seed, s) for s in ("dataset", "init", "mc"))
        provenance = _provenance(seed, dataset=data_seed, init=init_seed, mc=mc_seed)
        tag = f"[seed={seed}]"
        antipodal = seed == antipodal_seed and cfg.n >= 2
        ts = generate(cfg.n, cfg.d, cfg.k, cfg.target, data_seed, antipodal_pair=antipodal)
        report, _ = spectrum_report(ts, cfg.mc_samples, mc_seed, bias=True, workers=1)
        lam, margin = report.lambda_min_estimate, report.std_error
        alpha, beta = bias_scaling(cfg.k)

        claims = [Claim(
            name=f"theorem2_bound{tag}",
            inequality="lambda_min(H_inf) + 3 se >= min(alpha delta1_hat, 2 beta) / (200 n^2)",
            measured={
                "lambda_min_estimate": lam,
                "eigen_margin": margin,
                "bound": report.theorem2_bound,
                "alpha": alpha,
                "beta": beta,
                "antipodal_pair": antipodal,
            },
            margin_policy="3 std errors against the claim",
            passed=report.bound_satisfied,
            provenance=provenance,
        )]

        if antipodal:
            plain, _ = spectrum_report(ts, cfg.mc_samples, mc_seed, bias=False, workers=1)
            claims.append(Claim(
                name=f"no_bias_uncertified{tag}",
                inequality="points not separated up to sign, so no bias-free eigenvalue bound applies",
                measured={
                    "lambda_min_estimate": plain.lambda_min_estimate,
                    "eigen_margin": plain.std_error,
                    "delta1": plain.delta1,
                    "satisfies_assumption1": plain.satisfies_assumption1,
                },
                margin_policy="informational",
                passed=not plain.satisfies_assumption1,
                provenance=provenance,
                required=False,
            ))

        m, width_claim = _theorem_width(cfg, lam, provenance)
        p0 = init(m, cfg.d, cfg.k, True, init_seed)
        claims.append(width_claim)
        claims.extend(_train_or_fail(cfg, ts, p0, seed, lam, margin, provenance, tag, escape_required=False))
        return claims

    claims = _run_seeds(run, cfg.seeds, cfg.workers)
    return Verdict(experiment="theorem2", claims=claims, environment=_environment(cfg, started))


def prop1_sweep(cfg: ExperimentConfig) -> List[Tuple[int, int, float]]:
    """(n, k, tilt) of each dataset, cycling n fastest, then k, then tilt"""
    combos = []
    for j in range(cfg.datasets):
        n = cfg.sweep_n[j % len(cfg.sweep_n)]
        k = cfg.sweep_k[(j // len(cfg.sweep_n)) % len(cfg.sweep_k)]
        tilt = cfg.sweep_tilt[(j // (len(cfg.sweep_n) * len(cfg.sweep_k))) % len(cfg.sweep_tilt)]
        combos.append((n, k, tilt if k > 0 else 0.0))
    return combos


def verify_prop1(cfg: ExperimentConfig) -> Verdict:
    """Eigenvalue floors of H-infinity and E[M] against the measured margins"""
    started = time.monotonic()
    seed = cfg.seeds[0]
    sweep = prop1_sweep(cfg)

    def run(j: int) -> List[Claim]:
        n, k, tilt = sweep[j]
        data_seed, mc_seed = derive_seed(seed, "dataset", j), derive_seed(seed, "mc", j)
        provenance = _provenance(seed, dataset=data_seed, mc=mc_seed) + f" dataset={j}"
        tag = f"[dataset={j} n={n} k={k} tilt={tilt}]"
        ts = generate(n, cfg.d, k, cfg.target, data_seed, tilt=tilt)
        report, _ = spectrum_report(ts, cfg.mc_samples, mc_seed, bias=False, workers=1)
        claims = [Claim(
            name=f"prop1{tag}",
            inequality="lambda_min(H_inf) + 3 se >= (1 - k delta2) delta1 / (100 n^2)",
            measured={
                "lambda_min_estimate": report.lambda_min_estimate,
                "eigen_margin": report.std_error,
                "bound": report.prop1_bound,
                "delta1": report.delta1,
                "delta2": report.delta2,
            },
            margin_policy="3 std errors against the claim",
            passed=report.bound_satisfied,
            provenance=provenance,
        )]

        m_est = expected_M(ts, cfg.mc_samples, mc_seed, workers=1)
        floor = report.delta1 / (100.0 * n ** 2)
        claims.append(Claim(
            name=f"lemma6{tag}",
            inequality="lambda_min(E[M(w)]) + 3 se >= delta1 / (100 n^2)",
            measured={"lambda_min_estimate": m_est.lambda_min, "eigen_margin": m_est.eigen_margin, "bound": floor},
            margin_policy="3 std errors against the claim",
            passed=m_est.lambda_min + MARGIN_STD_ERRORS * m_est.eigen_margin >= floor,
            provenance=provenance,
        ))
        return claims

    claims = _run_seeds(run, list(range(len(sweep))), cfg.workers)
    return Verdict(experiment="prop1", claims=claims, environment=_environment(cfg, started))


def _lemma1_claims(cfg: ExperimentConfig, ts: TrainingSet, seed: int) -> List[Claim]:
    """Per-neuron Jacobian and Gram norms at random parameter points"""
    m, n, k = cfg.lemma1_width, ts.n, ts.k
    worst_value = worst_dir = worst_gram = 0.0
    for j in range(cfg.lemma1_points):
        p = init(m, ts.d, k, False, derive_seed(seed, "points", j))
        for r in range(m):
            for i in range(n):
                row = param_jacobian_row(p, ts.x[i], ts.V[i], r)
                worst_value = max(worst_value, float(np.linalg.norm(row.value_w)))
                if k:
                    worst_dir = max(worst_dir, float(np.linalg.norm(row.dir_w, 2)))
        worst_gram = max(worst_gram, float(neuron_kernel_norms(p, ts).max()))
    provenance = _provenance(seed, points=derive_seed(seed, "points", 0)) + f" points={cfg.lemma1_points}"
    tol = 1e-12
    return [
        Claim(
            name="lemma1_value_gradient",
            inequality="|df(x_i)/dw_r| <= 1/sqrt(m)",
            measured={"max_norm": worst_value, "bound": 1.0 / math.sqrt(m)},
            margin_policy="rounding tolerance 1e-12",
            passed=worst_value <= 1.0 / math.sqrt(m) + tol,
            provenance=provenance,
        ),
        Claim(
            name="lemma1_direction_gradient",
            inequality="|dF(x_i)/dw_r|_2 <= sqrt(k/m)",
            measured={"max_norm": worst_dir, "bound": math.sqrt(k / m)},
            margin_policy="rounding tolerance 1e-12",
            passed=worst_dir <= math.sqrt(k / m) + tol,
            provenance=provenance,
        ),
        Claim(
            name="lemma1_neuron_kernel",
            inequality="|H_r|_2 <= n(k+1)/m",
            measured={"max_norm": worst_gram, "bound": n * (k + 1) / m},
            margin_policy="rounding tolerance 1e-12",
            passed=worst_gram <= n * (k + 1) / m + tol,
            provenance=provenance,
        ),
    ]


def verify_lemmas(cfg: ExperimentConfig) -> Verdict:
    """Battery of the auxiliary bounds used by the convergence proof"""
    started = time.monotonic()
    base = cfg.seeds[0]
    data_seed, mc_seed = derive_seed(base, "dataset"), derive_seed(base, "mc")
    ts = generate(cfg.n, cfg.d, cfg.k, cfg.target, data_seed)
    separation = validate(ts)
    n, k, delta = ts.n, ts.k, cfg.delta
    dim = n * (k + 1)
    data_provenance = _provenance(base, dataset=data_seed, mc=mc_seed)

    claims = _lemma1_claims(cfg, ts, base)

    report, _ = spectrum_report(ts, cfg.mc_samples, mc_seed, bias=False, workers=cfg.workers)
    lam, margin = report.lambda_min_estimate, report.std_error
    m, width_claim = _theorem_width(cfg, lam, data_provenance)
    claims.append(width_claim)

    threshold = (2.0 * math.sqrt(n * k) + separation.gamma) / math.sqrt(delta)

    def run(seed: int) -> Tuple[float, float, np.ndarray, np.ndarray]:
        p0 = init(m, ts.d, k, False, derive_seed(seed, "init"))
        res = residuals(p0, ts)
        values = forward_batch(p0, ts.x)
        directional = np.einsum('nd,ndk->nk', direction_gradients(p0, ts.x), ts.V)
        return (
            lambda_min(kernel_at(p0, ts).H),
            res.e_norm + res.S_norm,
            values ** 2,
            np.sum(directional ** 2, axis=1),
        )

    by_seed: Dict[int, Tuple[float, float, np.ndarray, np.ndarray]] = {}
    with ThreadPoolExecutor(max_workers=max(1, min(cfg.workers, len(cfg.seeds)))) as executor:
        futures = {executor.submit(run, seed): seed for seed in cfg.seeds}
        for future in as_completed(futures):
            by_seed[futures[future]] = future.result()
    ordered = [by_seed[s] for s in sorted(by_seed)]
    trials = len(ordered)
    sweep_provenance = f"init seeds derived from {sorted(by_seed)[0]}..{sorted(by_seed)[-1]} ({trials} seeds)"

    kernel_mins = np.array([o[0] for o in ordered])
    lemma2 = frequency_test(int(np.sum(kernel_mins < 0.75 * lam)), trials, delta)
    claims.append(Claim(
        name="lemma2_frequency",
        inequality="P(lambda_min(H(0)) < 3/4 lambda*) <= delta",
        measured={**asdict(lemma2), "m": m, "lambda_star": lam},
        margin_policy="exact binomial one-sided 95%",
        passed=lemma2.passed,
        provenance=sweep_provenance,
    ))

    initial = np.array([o[1] for o in ordered])
    lemma3 = frequency_test(int(np.sum(initial > threshold)), trials, delta)
    claims.append(Claim(
        name="lemma3_frequency",
        inequality="P(|e(0)| + |S(0)| > (2 sqrt(nk) + gamma)/sqrt(delta)) <= delta",
        measured={**asdict(lemma3), "threshold": threshold, "gamma": separation.gamma},
        margin_policy="exact binomial one-sided 95%",
        passed=lemma3.passed,
        provenance=sweep_provenance,
    ))

    # E f^2 <= 1 and E |F|^2 <= k per sample, averaged over inits
    f_sq = np.stack([o[2] for o in ordered])
    F_sq = np.stack([o[3] for o in ordered])
    for name, samples, bound, text in (
        ("lemma3_value_moment", f_sq, 1.0, "E[f(W(0), x_i)^2] <= 1"),
        ("lemma3_direction_moment", F_sq, float(k), "E|F(W(0), x_i)|^2 <= k"),
    ):
        mean = samples.mean(axis=0)
        se = samples.std(axis=0, ddof=1) / math.sqrt(trials) if trials > 1 else np.zeros_like(mean)
        claims.append(Claim(
            name=name,
            inequality=text,
            measured={"max_mean": float(mean.max()), "bound": bound},
            margin_policy="3 std errors against the claim",
            passed=bool(np.all(mean - MARGIN_STD_ERRORS * se <= bound)),
            provenance=sweep_provenance,
        ))

    m_est = expected_M(ts, cfg.mc_samples, mc_seed, workers=cfg.workers)
    floor = separation.delta1 / (100.0 * n ** 2)
    claims.append(Claim(
        name="lemma6",
        inequality="lambda_min(E[M(w)]) + 3 se >= delta1 / (100 n^2)",
        measured={"lambda_min_estimate": m_est.lambda_min, "eigen_margin": m_est.eigen_margin, "bound": floor},
        margin_policy="3 std errors against the claim",
        passed=m_est.lambda_min + MARGIN_STD_ERRORS * m_est.eigen_margin >= floor,
        provenance=data_provenance,
    ))

    grams = gram_blocks(ts)
    lemma7_floor = 1.0 - k * separation.delta2
    gersh = min(gershgorin_lower_bound(grams.diagonal_block(i)) for i in range(n))
    exact = min(lambda_min(grams.diagonal_block(i)) for i in range(n))
    claims.append(Claim(
        name="lemma7",
        inequality="lambda_min(X_i^T X_i) >= Gershgorin bound >= 1 - k delta2",
        measured={"min_eigenvalue": exact, "min_gershgorin": gersh, "bound": lemma7_floor},
        margin_policy="rounding tolerance 1e-10",
        passed=gersh >= lemma7_floor - 1e-10 and exact >= gersh - 1e-10,
        provenance=data_provenance,
    ))

    rhs = chernoff_tail_bound(dim, lam, dim / m, CHERNOFF_EPS) if lam > 0 else 1.0
    chernoff = frequency_test(int(np.sum(kernel_mins < CHERNOFF_EPS * lam)), trials, rhs)
    claims.append(Claim(
        name="matrix_chernoff",
        inequality="P(lambda_min(sum_r H_r(0)) < eps lambda*) <= p exp(-(1 - eps)^2 lambda* / (2L)), eps = 3/4",
        measured={**asdict(chernoff), "L": dim / m, "rhs": rhs},
        margin_policy="exact binomial one-sided 95%",
        passed=chernoff.passed,
        provenance=sweep_provenance,
    ))

    return Verdict(experiment="lemmas", claims=claims, environment=_environment(cfg, started))


VERIFIERS: Dict[str, Callable[[ExperimentConfig], Verdict]] = {
    "theorem1": verify_theorem1,
    "theorem2": verify_theorem2,
    "prop1": verify_prop1,
    "lemmas": verify_lemmas,
}


def run_experiment(cfg: ExperimentConfig) -> Verdict:
    return VERIFIERS[cfg.which](cfg)
