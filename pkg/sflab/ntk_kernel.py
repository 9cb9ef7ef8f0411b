"""Neural tangent kernel of the Sobolev-trained network.

Everything spectral lives here: the feature maps and Omega(w), per-neuron
Grams H_r, the blocks A/B/C of H(t), the Monte-Carlo estimator of H-infinity,
the random matrix M(w), the block factorization of the permuted kernel, and
the eigenvalue lower bounds for both network variants.

Columns follow the residual stacking order: the n value columns first, then
the k direction columns of sample 0, sample 1, ...
"""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from typing import Any, Dict, Optional, Tuple

import numpy as np

from . import config
from .config import MARGIN_STD_ERRORS, MC_CHUNK_SIZE, MC_MIN_SAMPLES
from .dataset import SeparationReport, TrainingSet, validate
from .errors import AssumptionViolationError, InvalidInputError
from .linalg_core import (
    BlockMatrix,
    SymMatrix,
    block_hadamard,
    kronecker,
    lambda_max,
    lambda_min,
)
from .network import NetParams, activation_pattern, bias_scaling, param_jacobian_row


@dataclass(frozen=True)
class KernelMatrix:
    n: int
    k: int
    H: SymMatrix

    @property
    def A(self) -> np.ndarray:
        return self.H.entries[:self.n, :self.n]

    @property
    def B(self) -> np.ndarray:
        return self.H.entries[:self.n, self.n:]

    @property
    def C(self) -> np.ndarray:
        return self.H.entries[self.n:, self.n:]


@dataclass(frozen=True)
class MonteCarloEstimate:
    """Entrywise Monte-Carlo mean with standard errors"""

    mean: SymMatrix
    std_error: np.ndarray
    samples: int
    seed: int

    @property
    def eigen_margin(self) -> float:
        """Frobenius norm of the standard errors, a Weyl bound on the eigenvalue error"""
        return float(np.linalg.norm(self.std_error, 'fro'))

    @property
    def lambda_min(self) -> float:
        return lambda_min(self.mean)


@dataclass(frozen=True)
class KernelSpectrumReport:
    lambda_min_estimate: float
    mc_samples: int
    std_error: float
    prop1_bound: Optional[float]
    bound_satisfied: bool
    n: int
    k: int
    seed: int
    bias: bool
    delta1: float
    delta1_hat: float
    delta2: float
    satisfies_assumption1: bool
    satisfies_assumption2: bool
    singleton_convention: bool
    theorem2_bound: Optional[float] = None
    margin_std_errors: float = MARGIN_STD_ERRORS

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def stacking_owner(n: int, k: int) -> np.ndarray:
    """Sample index owning each stacked column"""
    return np.concatenate([np.arange(n), np.repeat(np.arange(n), k)])


def hat_permutation(n: int, k: int) -> np.ndarray:
    """Column order grouping each sample's value and directions together"""
    order = [[i] + [n + i * k + j for j in range(k)] for i in range(n)]
    return np.array([c for group in order for c in group], dtype=int)


def frame_matrix(ts: TrainingSet) -> np.ndarray:
    """[x_1, ..., x_n, V_1, ..., V_n] as a d x n(k+1) matrix"""
    directions = ts.V.transpose(1, 0, 2).reshape(ts.d, ts.n * ts.k)
    return np.concatenate([ts.x.T, directions], axis=1)


def lift_bias(ts: TrainingSet, alpha: float, beta: float) -> TrainingSet:
    """Bias problem rewritten as a bias-free one on [alpha x; beta], [V; 0], h/alpha"""
    x = np.concatenate([alpha * ts.x, np.full((ts.n, 1), beta)], axis=1)
    V = np.concatenate([ts.V, np.zeros((ts.n, 1, ts.k))], axis=1)
    return TrainingSet(x=x, y=ts.y, V=V, h=ts.h / alpha)


def lift_params(p: NetParams) -> NetParams:
    """Bias net as a bias-free net with weights [w_r; b_r]"""
    if not p.has_bias:
        return p
    return NetParams(W=np.concatenate([p.W, p.b[:, None]], axis=1), a=p.a)


def _kernel_data(p: NetParams, ts: TrainingSet) -> TrainingSet:
    if p.d != ts.d:
        raise InvalidInputError(f"Network input dim {p.d} does not match dataset d={ts.d}")
    return lift_bias(ts, p.alpha, p.beta) if p.has_bias else ts


def feature_matrix(w: np.ndarray, ts: TrainingSet) -> np.ndarray:
    """Omega(w): columns sigma'(w^T x_i) x_i, then sigma'(w^T x_i) V_i"""
    w = np.asarray(w, dtype=np.float64)
    if w.shape != (ts.d,):
        raise InvalidInputError(f"Need w of shape ({ts.d},), got {w.shape}")
    active = (ts.x @ w > 0).astype(np.float64)
    return frame_matrix(ts) * active[stacking_owner(ts.n, ts.k)]


def random_M(w: np.ndarray, ts: TrainingSet) -> SymMatrix:
    """[M(w)]_ij = sigma'(w^T x_i) sigma'(w^T x_j)"""
    active = (ts.x @ np.asarray(w, dtype=np.float64) > 0).astype(np.float64)
    return SymMatrix(np.outer(active, active))


def kernel_at(p: NetParams, ts: TrainingSet) -> KernelMatrix:
    """H = sum_r Omega_r^T Omega_r, the Gram of parameter Jacobians.

    Omega_r is a_r times the frame matrix with inactive samples zeroed, so
    the sum collapses to (Z^T Z) * (S^T diag(a^2) S) with S the stacked
    activation pattern.
    """
    data = _kernel_data(p, ts)
    frames = frame_matrix(data)
    # (m, n(k+1)): neuron r's activation on the sample owning each stacked column
    pattern = activation_pattern(lift_params(p), data.x).T[:, stacking_owner(ts.n, ts.k)].astype(np.float64)
    coactive = pattern.T @ (pattern * (p.a ** 2)[:, None])
    return KernelMatrix(n=ts.n, k=ts.k, H=SymMatrix((frames.T @ frames) * coactive))


def neuron_features(p: NetParams, ts: TrainingSet, r: int) -> np.ndarray:
    """Omega_r: derivatives of all stacked outputs with respect to neuron r's parameters"""
    data = _kernel_data(p, ts)
    lifted = lift_params(p)
    active = (data.x @ lifted.W[r] > 0).astype(np.float64)
    return p.a[r] * frame_matrix(data) * active[stacking_owner(ts.n, ts.k)]


def neuron_kernel(p: NetParams, ts: TrainingSet, r: int) -> SymMatrix:
    omega = neuron_features(p, ts, r)
    return SymMatrix(omega.T @ omega)


def kernel_from_jacobian(p: NetParams, ts: TrainingSet) -> KernelMatrix:
    """H assembled as J J^T from per-neuron Jacobian rows (reference path)"""
    n, k = ts.n, ts.k
    width = p.d + (1 if p.has_bias else 0)
    J = np.zeros((n * (k + 1), p.m * width))
    for r in range(p.m):
        cols = slice(r * width, r * width + p.d)
        for i in range(n):
            row = param_jacobian_row(p, ts.x[i], ts.V[i], r)
            J[i, cols] = row.value_w
            J[n + i * k:n + (i + 1) * k, cols] = row.dir_w.T
            if p.has_bias:
                J[i, r * width + p.d] = row.value_b
                J[n + i * k:n + (i + 1) * k, r * width + p.d] = row.dir_b
    return KernelMatrix(n=n, k=k, H=SymMatrix(J @ J.T))


def _activation_counts(x: np.ndarray, samples: int, seed: int, workers: int) -> np.ndarray:
    """Counts of joint activation of every pair over Gaussian draws.

    Chunk c draws from its own stream seeded by (seed, c). Counts are exact
    integers, so the chunk-ordered reduction is bit-reproducible for any
    worker count.
    """
    n, d = x.shape
    sizes = [MC_CHUNK_SIZE] * (samples // MC_CHUNK_SIZE)
    if samples % MC_CHUNK_SIZE:
        sizes.append(samples % MC_CHUNK_SIZE)

    def run_chunk(job: Tuple[int, int]) -> np.ndarray:
        index, size = job
        rng = np.random.default_rng([seed, index])
        active = (rng.standard_normal((size, d)) @ x.T > 0).astype(np.float64)
        return active.T @ active

    counts = np.zeros((n, n))
    with ThreadPoolExecutor(max_workers=max(1, workers)) as executor:
        for chunk in executor.map(run_chunk, enumerate(sizes)):
            counts += chunk
    return counts


def expected_M(ts: TrainingSet, mc_samples: int, seed: int, workers: Optional[int] = None) -> MonteCarloEstimate:
    """Monte-Carlo estimate of E_w[M(w)] with entrywise standard errors"""
    if mc_samples < MC_MIN_SAMPLES:
        raise InvalidInputError(f"Need at least {MC_MIN_SAMPLES} Monte-Carlo samples, got {mc_samples}")
    counts = _activation_counts(ts.x, mc_samples, seed, workers or config.THREADS)
    prob = counts / mc_samples
    std_error = np.sqrt(prob * (1.0 - prob) / (mc_samples - 1))
    return MonteCarloEstimate(mean=SymMatrix(prob), std_error=std_error, samples=mc_samples, seed=seed)


def estimate_H_infinity(
    ts: TrainingSet, mc_samples: int, seed: int, workers: Optional[int] = None
) -> MonteCarloEstimate:
    """Monte-Carlo estimate of H-infinity = E_w[Omega(w)^T Omega(w)].

    Omega(w)^T Omega(w) = (Z^T Z) * M(w) lifted to stacked columns, so the
    estimate reuses the activation co-occurrence counts of expected_M.
    """
    m_est = expected_M(ts, mc_samples, seed, workers)
    owner = stacking_owner(ts.n, ts.k)
    frames = frame_matrix(ts)
    gram = frames.T @ frames
    lift = np.ix_(owner, owner)
    return MonteCarloEstimate(
        mean=SymMatrix(gram * m_est.mean.entries[lift]),
        std_error=np.abs(gram) * m_est.std_error[lift],
        samples=mc_samples,
        seed=seed,
    )


def prop1_bound(report: SeparationReport, n: int, k: int) -> float:
    """(1 - k delta2) delta1 / (100 n^2), the bias-free kernel's eigenvalue floor"""
    if k * report.delta2 > 1.0 + 1e-12:
        raise AssumptionViolationError(f"k * delta2 = {k * report.delta2:.6g} exceeds 1")
    if report.delta1 <= 0:
        raise AssumptionViolationError("delta1 = 0: some pair of inputs is (anti)parallel")
    return max(0.0, 1.0 - k * report.delta2) * report.delta1 / (100.0 * n ** 2)


def theorem2_bound(report: SeparationReport, n: int, k: int, alpha: float, beta: float) -> float:
    """min(alpha delta1_hat, 2 beta) / (200 n^2), the bias kernel's eigenvalue floor"""
    if report.delta1_hat <= 0:
        raise AssumptionViolationError("delta1_hat = 0: duplicate inputs")
    return min(alpha * report.delta1_hat, 2.0 * beta) / (200.0 * n ** 2)


def spectrum_report(
    ts: TrainingSet,
    mc_samples: int,
    seed: int,
    bias: bool = False,
    workers: Optional[int] = None,
) -> Tuple[KernelSpectrumReport, MonteCarloEstimate]:
    """Estimate lambda_min of H-infinity and compare it with the applicable lower bound"""
    separation = validate(ts)
    if bias:
        alpha, beta = bias_scaling(ts.k)
        estimate = estimate_H_infinity(lift_bias(ts, alpha, beta), mc_samples, seed, workers)
    else:
        estimate = estimate_H_infinity(ts, mc_samples, seed, workers)
    lam = estimate.lambda_min
    margin = estimate.eigen_margin

    p1 = None
    if separation.delta1 > 0 and ts.k * separation.delta2 <= 1.0 + 1e-12:
        p1 = prop1_bound(separation, ts.n, ts.k)
    t2 = None
    if bias and separation.satisfies_assumption2:
        t2 = theorem2_bound(separation, ts.n, ts.k, alpha, beta)

    bound = t2 if bias else p1
    satisfied = bound is not None and lam + MARGIN_STD_ERRORS * margin >= bound
    report = KernelSpectrumReport(
        lambda_min_estimate=lam,
        mc_samples=mc_samples,
        std_error=margin,
        prop1_bound=p1,
        bound_satisfied=bool(satisfied),
        n=ts.n,
        k=ts.k,
        seed=seed,
        bias=bias,
        delta1=separation.delta1,
        delta1_hat=separation.delta1_hat,
        delta2=separation.delta2,
        satisfies_assumption1=separation.satisfies_assumption1,
        satisfies_assumption2=separation.satisfies_assumption2,
        singleton_convention=separation.singleton_convention,
        theorem2_bound=t2,
    )
    return report, estimate


def gram_blocks(ts: TrainingSet) -> BlockMatrix:
    """X^T X as n x n blocks X_a^T X_b with X_i = [x_i, V_i]"""
    frames = np.concatenate([ts.x[:, :, None], ts.V], axis=2)
    return BlockMatrix(np.einsum('adi,bdj->abij', frames, frames))


def hat_feature_matrix(w: np.ndarray, ts: TrainingSet) -> np.ndarray:
    """Omega-hat(w) = [sigma'(w^T x_1) X_1, ..., sigma'(w^T x_n) X_n]"""
    return feature_matrix(w, ts)[:, hat_permutation(ts.n, ts.k)]


def hatH_factorization_check(ts: TrainingSet, w_samples: np.ndarray, tol: float = 1e-12) -> bool:
    """Check (X^T X) block-Hadamard (M(w) kron I) == Omega-hat(w)^T Omega-hat(w) for every sample"""
    w_samples = np.atleast_2d(np.asarray(w_samples, dtype=np.float64))
    if w_samples.shape[0] < 1:
        raise InvalidInputError("Need at least one w sample")
    p = ts.k + 1
    grams = gram_blocks(ts)
    identity = SymMatrix.identity(p)
    order = hat_permutation(ts.n, ts.k)
    for w in w_samples:
        lifted_M = BlockMatrix.from_dense(kronecker(random_M(w, ts), identity), p)
        factored = block_hadamard(grams, lifted_M).flatten()
        hat = hat_feature_matrix(w, ts)
        omega = feature_matrix(w, ts)
        permuted = (omega.T @ omega)[np.ix_(order, order)]
        if np.max(np.abs(factored - hat.T @ hat)) > tol or np.max(np.abs(permuted - hat.T @ hat)) > tol:
            return False
    return True


def flip_products(p0: NetParams, p: NetParams, ts: TrainingSet) -> np.ndarray:
    """Q_ijr = |s_ir s_jr - s0_ir s0_jr| with s the activation pattern: shape (n, n, m)"""
    now = activation_pattern(p, ts.x).astype(np.float64)
    start = activation_pattern(p0, ts.x).astype(np.float64)
    return np.abs(np.einsum('ir,jr->ijr', now, now) - np.einsum('ir,jr->ijr', start, start))


def block_drift_check(p0: NetParams, p: NetParams, ts: TrainingSet, tol: float = 1e-12) -> bool:
    """Entrywise kernel-block drift bounded by the activation-product changes"""
    n, k, m = ts.n, ts.k, p.m
    q_sum = flip_products(p0, p, ts).sum(axis=2) / m
    H0 = kernel_at(p0, ts)
    H1 = kernel_at(p, ts)
    dA = np.abs(H1.A - H0.A)
    dB = np.linalg.norm((H1.B - H0.B).reshape(n, n, k), axis=2) if k else np.zeros((n, n))
    dC = (
        np.linalg.norm((H1.C - H0.C).reshape(n, k, n, k).transpose(0, 2, 1, 3), axis=(2, 3))
        if k else np.zeros((n, n))
    )
    return bool(
        np.all(dA <= q_sum + tol)
        and np.all(dB <= np.sqrt(k) * q_sum + tol)
        and np.all(dC <= k * q_sum + tol)
    )


def arccos_expectation(c: float) -> float:
    """P(w^T x > 0, w^T y > 0) = (pi - arccos(x^T y)) / (2 pi) for unit x, y"""
    return (math.pi - math.acos(max(-1.0, min(1.0, c)))) / (2.0 * math.pi)


def lemma2_width(lambda_star: float, n: int, k: int, delta: float) -> int:
    """Width (32 / lambda*) n(k+1) ln(n(k+1) / delta) above which lambda_min(H(0)) >= 3/4 lambda*"""
    if lambda_star <= 0:
        raise InvalidInputError(f"lambda* must be positive, got {lambda_star}")
    dim = n * (k + 1)
    return int(math.ceil(32.0 / lambda_star * dim * math.log(dim / delta)))


def chernoff_tail_bound(dim: int, lambda_min_expected: float, L: float, eps: float) -> float:
    """p exp(-(1 - eps)^2 lambda_min(E X) / (2 L)) for sums of PSD terms bounded by L"""
    return dim * math.exp(-(1.0 - eps) ** 2 * lambda_min_expected / (2.0 * L))


def neuron_kernel_norms(p: NetParams, ts: TrainingSet) -> np.ndarray:
    """Spectral norm of every per-neuron Gram H_r"""
    return np.array([lambda_max(neuron_kernel(p, ts, r)) for r in range(p.m)])
