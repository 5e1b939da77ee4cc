"""
Semi-supervised partial-membership unmixing with superpixels as documents.

Generative model
    pi_d ~ Dirichlet(alpha * 1_M)                      per superpixel d
    z_i  ~ Dirichlet(lambda * pi_d)                    per pixel i in d
    x_i  ~ Normal(sum_k z_ik mu_k, diag(sum_k z_ik sigma2_k))

Superpixels carrying a partial label keep at most epsilon of their mass (in
pi_d and in every z_i) on endmembers outside the allowed set. Memberships
and document proportions are updated by Metropolis-Hastings with Dirichlet
random-walk proposals; endmembers are refitted from the current memberships
after every sweep.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, List, Optional, Tuple

import numpy as np
from scipy.spatial.distance import cdist
from scipy.special import gammaln
from sklearn.cluster import KMeans, kmeans_plusplus
from tqdm import tqdm

from errors import InputError
from hsio import HsiCube
from labels import is_compact, validate_label_map

logger = logging.getLogger(__name__)

TINY = 1e-12
PROPOSAL_FLOOR = 0.1
VARIANCE_FLOOR = 1e-6
TUNE_EVERY = 10
TARGET_ACCEPTANCE = (0.2, 0.4)
TREND_WINDOW = 10
TREND_TOLERANCE = 0.5


@dataclass
class Endmember:
    mu: np.ndarray
    sigma2: np.ndarray
    tag: Optional[str] = None

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=np.float64)
        self.sigma2 = np.asarray(self.sigma2, dtype=np.float64)
        if self.mu.shape != self.sigma2.shape:
            raise InputError('endmember mean and variance differ in length')
        if not (np.isfinite(self.sigma2).all() and (self.sigma2 > 0).all()):
            raise InputError('endmember variances must be finite and strictly positive')


@dataclass
class PartialLabelSet:
    """Superpixel label -> allowed endmember indices, plus the class tag of each tagged endmember"""
    allowed: Dict[int, FrozenSet[int]] = field(default_factory=dict)
    endmember_tags: Dict[int, str] = field(default_factory=dict)

    def validate(self, M: int, n_superpixels: int) -> 'PartialLabelSet':
        for label, indices in self.allowed.items():
            if not 0 <= label < n_superpixels:
                raise InputError(f'partial label refers to unknown superpixel {label}')
            if not indices or any(not 0 <= k < M for k in indices):
                raise InputError(f'superpixel {label}: allowed set {sorted(indices)} is empty or exceeds M={M}')
        return self

    def __len__(self) -> int:
        return len(self.allowed)


@dataclass(frozen=True)
class SamplerParams:
    M: int
    alpha: float = 0.3
    lambda_pm: float = 1.0
    epsilon: float = 0.05
    T: int = 200
    seed: int = 0
    burn_in: Optional[int] = None
    init_membership: str = 'hard'
    step_concentration: float = 100.0
    progress: bool = False

    def __post_init__(self):
        checks = [('M', self.M >= 1), ('alpha', self.alpha > 0), ('lambda_pm', self.lambda_pm > 0),
                  ('epsilon', 0 <= self.epsilon <= 1), ('T', self.T >= 1),
                  ('burn_in', self.burn_in is None or 0 <= self.burn_in < self.T),
                  ('init_membership', self.init_membership in ('hard', 'uniform')),
                  ('step_concentration', self.step_concentration > 0)]
        for name, ok in checks:
            if not ok:
                raise InputError(f'invalid sampler parameter {name}={getattr(self, name)!r}')

    @property
    def effective_burn_in(self) -> int:
        return self.T // 2 if self.burn_in is None else self.burn_in


@dataclass
class SpmldaResult:
    proportions: np.ndarray
    endmembers: List[Endmember]
    pi: np.ndarray
    log_likelihood: List[float]
    acceptance: List[float]
    max_offset_mass: float
    retained_samples: int


def partial_labels_from_tags(tag_map: Dict[int, str], M: int,
                             class_endmembers: Optional[Dict[str, List[int]]] = None) -> PartialLabelSet:
    """Tags without an explicit endmember mapping take the next free index, in sorted tag order"""
    mapping = {tag: sorted(int(k) for k in indices) for tag, indices in (class_endmembers or {}).items()}
    used = {k for indices in mapping.values() for k in indices}
    next_index = 0
    for tag in sorted(set(tag_map.values())):
        if tag in mapping:
            continue
        while next_index in used:
            next_index += 1
        if next_index >= M:
            raise InputError(f'not enough endmembers (M={M}) for class tags {sorted(set(tag_map.values()))}')
        mapping[tag] = [next_index]
        used.add(next_index)

    endmember_tags = {}
    for tag in sorted(mapping):
        for k in mapping[tag]:
            endmember_tags.setdefault(k, tag)
    allowed = {int(label): frozenset(mapping[tag]) for label, tag in tag_map.items()}
    return PartialLabelSet(allowed, endmember_tags)


def _variance_floor(X: np.ndarray) -> np.ndarray:
    return np.maximum(VARIANCE_FLOOR * X.var(axis=0), TINY)


def init_endmembers(cube: HsiCube, M: int, seed: int = 0) -> List[Endmember]:
    """k-means++ seeding on pixel spectra refined by a short hard-assignment k-means"""
    X = cube.pixels()
    n_distinct = len(np.unique(X, axis=0))
    if M > n_distinct:
        raise InputError(f'M={M} exceeds the number of distinct spectra ({n_distinct})')
    seeds, _ = kmeans_plusplus(X, n_clusters=M, random_state=seed)
    model = KMeans(n_clusters=M, init=seeds, n_init=1, max_iter=10, random_state=seed).fit(X)

    floor = _variance_floor(X)
    endmembers = []
    for k in range(M):
        members = X[model.labels_ == k]
        sigma2 = members.var(axis=0) if len(members) else X.var(axis=0)
        endmembers.append(Endmember(model.cluster_centers_[k].copy(), np.maximum(sigma2, floor)))
    return endmembers


def dirichlet_logpdf(x: np.ndarray, concentration: np.ndarray) -> np.ndarray:
    """Row-wise Dirichlet log density; x is clipped away from zero"""
    x = np.maximum(x, TINY)
    return (gammaln(concentration.sum(axis=-1)) - gammaln(concentration).sum(axis=-1)
            + ((concentration - 1.0) * np.log(x)).sum(axis=-1))


def sample_dirichlet(rng: np.random.Generator, concentration: np.ndarray) -> np.ndarray:
    draws = rng.standard_gamma(concentration)
    totals = draws.sum(axis=-1, keepdims=True)
    draws = np.where(totals > 0, draws / np.where(totals > 0, totals, 1.0), 1.0 / concentration.shape[-1])
    return normalize_simplex(draws)


def normalize_simplex(z: np.ndarray) -> np.ndarray:
    z = np.maximum(z, TINY)
    return z / z.sum(axis=-1, keepdims=True)


def project_to_allowed(z: np.ndarray, allowed: np.ndarray, epsilon: float) -> np.ndarray:
    """
    Cap the mass outside the allowed set at epsilon, moving the excess onto the
    allowed entries in proportion to their current mass. Rows whose allowed
    mask is all True are untouched.
    """
    off = np.where(allowed, 0.0, z).sum(axis=-1)
    over = off > epsilon
    if not over.any():
        return z
    z = z.copy()
    rows, mask, outside = z[over], allowed[over], off[over]
    inside = 1.0 - outside
    rows = np.where(mask, rows, rows * (epsilon / outside)[:, None])
    spread = (1.0 - epsilon) / mask.sum(axis=-1)
    scaled = rows * ((1.0 - epsilon) / np.where(inside > 0, inside, 1.0))[:, None]
    rows = np.where(mask, np.where((inside > 0)[:, None], scaled, spread[:, None]), rows)
    z[over] = rows
    return z


def offset_mass(z: np.ndarray, allowed: np.ndarray) -> np.ndarray:
    return np.where(allowed, 0.0, z).sum(axis=-1)


def pixel_log_likelihood(X: np.ndarray, Z: np.ndarray, mu: np.ndarray, sigma2: np.ndarray) -> np.ndarray:
    mean = Z @ mu
    var = Z @ sigma2
    return -0.5 * (np.log(2.0 * np.pi * var) + (X - mean) ** 2 / var).sum(axis=1)


def _document_terms(Z: np.ndarray, pi: np.ndarray, doc: np.ndarray, lambda_pm: float) -> np.ndarray:
    """sum_i log Dir(z_i; lambda pi_d) for every document d, in closed form"""
    D, M = pi.shape
    counts = np.bincount(doc, minlength=D)
    log_z = np.log(np.maximum(Z, TINY))
    S = np.stack([np.bincount(doc, weights=log_z[:, k], minlength=D) for k in range(M)], axis=1)
    concentration = lambda_pm * pi
    return (counts * (gammaln(concentration.sum(axis=1)) - gammaln(concentration).sum(axis=1))
            + ((concentration - 1.0) * S).sum(axis=1))


def _joint_log_density(X, Z, pi, doc, mu, sigma2, alpha, lambda_pm) -> float:
    total = pixel_log_likelihood(X, Z, mu, sigma2).sum()
    if Z.shape[1] > 1:
        total += _document_terms(Z, pi, doc, lambda_pm).sum()
        total += dirichlet_logpdf(pi, np.full(pi.shape, alpha)).sum()
    return float(total)


def _document_means(Z: np.ndarray, doc: np.ndarray, D: int) -> np.ndarray:
    sums = np.stack([np.bincount(doc, weights=Z[:, k], minlength=D) for k in range(Z.shape[1])], axis=1)
    return normalize_simplex(sums)


def log_likelihood(cube: HsiCube, superpixels: np.ndarray, proportions: np.ndarray,
                   endmembers: List[Endmember], params: SamplerParams,
                   pi: Optional[np.ndarray] = None) -> float:
    """
    Joint log density of the model at the given state. Without pi, each
    superpixel's mean membership stands in for its document proportions.
    """
    superpixels = validate_label_map(superpixels, 'superpixels')
    X = cube.pixels()
    Z = np.asarray(proportions, dtype=np.float64).reshape(len(X), -1)
    doc = superpixels.ravel()
    D = int(doc.max()) + 1
    if pi is None:
        pi = _document_means(Z, doc, D)
    mu = np.array([e.mu for e in endmembers])
    sigma2 = np.array([e.sigma2 for e in endmembers])
    return _joint_log_density(X, Z, pi, doc, mu, sigma2, params.alpha, params.lambda_pm)


def moving_average(values, window: int = TREND_WINDOW) -> np.ndarray:
    values = np.asarray(values, dtype=np.float64)
    if len(values) < window:
        return np.empty(0)
    return np.convolve(values, np.ones(window) / window, mode='valid')


def likelihood_trend_holds(trace, burn_in: int, window: int = TREND_WINDOW,
                           tolerance: float = TREND_TOLERANCE) -> bool:
    """
    True when the windowed moving average of the post-burn-in trace never
    drops from one step to the next by more than `tolerance` standard
    deviations of that trace.
    """
    settled = np.asarray(trace[burn_in:], dtype=np.float64)
    averaged = moving_average(settled, window)
    if len(averaged) < 2:
        return True
    allowed = tolerance * float(np.std(settled))
    return float(np.max(averaged[:-1] - averaged[1:])) <= allowed


class SPMLDA:
    """Metropolis-within-Gibbs sampler for the semi-supervised partial-membership model"""

    def __init__(self, params: SamplerParams):
        self.params = params
        self._floor_warned = False

    def _check_inputs(self, cube: HsiCube, superpixels: np.ndarray, labels: PartialLabelSet):
        superpixels = validate_label_map(superpixels, 'superpixels')
        if superpixels.shape != (cube.height, cube.width):
            raise InputError(f'superpixels {superpixels.shape} do not match the cube {cube.height} x {cube.width}')
        if not is_compact(superpixels):
            raise InputError('superpixels must be compacted (labels 0..K-1, all present)')
        D = int(superpixels.max()) + 1
        labels.validate(self.params.M, D)
        return superpixels, D

    def _allowed_masks(self, labels: PartialLabelSet, D: int) -> np.ndarray:
        allowed = np.ones((D, self.params.M), dtype=bool)
        for label, indices in labels.allowed.items():
            allowed[label] = False
            allowed[label, sorted(indices)] = True
        return allowed

    def _align_to_labels(self, X, doc, endmembers, labels: PartialLabelSet) -> List[Endmember]:
        """Permute the unsupervised endmembers so each singly-labelled index starts near its labelled data"""
        targets = {}
        for label, indices in labels.allowed.items():
            if len(indices) == 1:
                targets.setdefault(next(iter(indices)), []).append(label)
        if not targets:
            return endmembers

        order: List[Optional[int]] = [None] * len(endmembers)
        free = list(range(len(endmembers)))
        for k in sorted(targets):
            members = np.isin(doc, targets[k])
            mean = X[members].mean(axis=0)
            nearest = min(free, key=lambda j: (float(((endmembers[j].mu - mean) ** 2).sum()), j))
            order[k] = nearest
            free.remove(nearest)
        for k in range(len(order)):
            if order[k] is None:
                order[k] = free.pop(0)
        return [endmembers[j] for j in order]

    def _refit_endmembers(self, X, Z, mu, sigma2, floor):
        """Weighted least squares for the means, membership-weighted residual variance"""
        weights = 1.0 / (Z @ sigma2.mean(axis=1))
        ZW = Z * weights[:, None]
        gram = ZW.T @ Z
        ridge = 1e-8 * np.trace(gram) / len(gram)
        mu = np.linalg.solve(gram + ridge * np.eye(len(gram)), ZW.T @ X + ridge * mu)

        mass = Z.sum(axis=0)
        residual = (X - Z @ mu) ** 2
        fitted = (Z.T @ residual) / np.maximum(mass, TINY)[:, None]
        degenerate = ~(fitted >= floor)
        if degenerate.any():
            log = logger.debug if self._floor_warned else logger.warning
            log('re-flooring %d endmember variances at the degenerate limit', int(degenerate.sum()))
            self._floor_warned = True
        sigma2 = np.where(degenerate, floor, fitted)
        return mu, sigma2

    def _initial_memberships(self, X, mu, M):
        if self.params.init_membership == 'uniform' or M == 1:
            return np.full((len(X), M), 1.0 / M)
        nearest = np.argmin(cdist(X, mu, 'sqeuclidean'), axis=1)
        Z = np.full((len(X), M), 0.01 / (M - 1))
        Z[np.arange(len(X)), nearest] = 0.99
        return Z

    def run(self, cube: HsiCube, superpixels: np.ndarray,
            labels: Optional[PartialLabelSet] = None) -> SpmldaResult:
        params = self.params
        labels = labels or PartialLabelSet()
        superpixels, D = self._check_inputs(cube, superpixels, labels)
        M = params.M
        X = cube.pixels()
        doc = superpixels.ravel()
        rng = np.random.default_rng(params.seed)
        floor = _variance_floor(X)

        endmembers = self._align_to_labels(X, doc, init_endmembers(cube, M, params.seed), labels)
        mu = np.array([e.mu for e in endmembers])
        sigma2 = np.array([e.sigma2 for e in endmembers])

        doc_allowed = self._allowed_masks(labels, D)
        pixel_allowed = doc_allowed[doc]
        Z = project_to_allowed(self._initial_memberships(X, mu, M), pixel_allowed, params.epsilon)
        pi = project_to_allowed(_document_means(Z, doc, D), doc_allowed, params.epsilon)

        burn_in = params.effective_burn_in
        z_step, pi_step = params.step_concentration, params.step_concentration
        z_accepted, pi_accepted = [], []
        trace, acceptance = [], []
        z_sum, pi_sum, kept = np.zeros_like(Z), np.zeros_like(pi), 0
        max_offset = 0.0
        logger.info('sPM-LDA: %d pixels, %d superpixels (%d labelled), M=%d, T=%d, burn-in %d',
                    len(X), D, len(labels), M, params.T, burn_in)

        for t in tqdm(range(params.T), desc='sPM-LDA', disable=not params.progress):
            if M > 1:
                Z, z_rate = self._update_memberships(rng, X, Z, pi[doc], mu, sigma2, pixel_allowed, z_step)
                pi, pi_rate = self._update_documents(rng, Z, pi, doc, doc_allowed, pi_step)
                z_accepted.append(z_rate)
                pi_accepted.append(pi_rate)
                acceptance.append(z_rate)
            mu, sigma2 = self._refit_endmembers(X, Z, mu, sigma2, floor)
            trace.append(_joint_log_density(X, Z, pi, doc, mu, sigma2, params.alpha, params.lambda_pm))

            if t < burn_in and M > 1 and (t + 1) % TUNE_EVERY == 0:
                z_step = self._tune(z_step, np.mean(z_accepted[-TUNE_EVERY:]))
                pi_step = self._tune(pi_step, np.mean(pi_accepted[-TUNE_EVERY:]))
            if t >= burn_in:
                z_sum += Z
                pi_sum += pi
                kept += 1
                if len(labels):
                    max_offset = max(max_offset, float(offset_mass(Z, pixel_allowed).max()),
                                     float(offset_mass(pi, doc_allowed).max()))

        if not likelihood_trend_holds(trace, burn_in):
            logger.warning('sPM-LDA: log density still falling after burn-in; consider a larger T or burn_in')
        proportions = (z_sum / kept).reshape(cube.height, cube.width, M)
        tags = [labels.endmember_tags.get(k) for k in range(M)]
        final = [Endmember(mu[k], sigma2[k], tags[k]) for k in range(M)]
        logger.info('sPM-LDA done: final log density %.6g, mean membership acceptance %.2f',
                    trace[-1], float(np.mean(acceptance)) if acceptance else 1.0)
        return SpmldaResult(proportions, final, pi_sum / kept, trace, acceptance, max_offset, kept)

    @staticmethod
    def _tune(step: float, rate: float) -> float:
        low, high = TARGET_ACCEPTANCE
        if rate < low:
            return step * 1.5
        if rate > high:
            return step / 1.5
        return step

    def _update_memberships(self, rng, X, Z, pi_rows, mu, sigma2, allowed, step):
        lam = self.params.lambda_pm
        forward = step * Z + PROPOSAL_FLOOR
        proposal = project_to_allowed(sample_dirichlet(rng, forward), allowed, self.params.epsilon)
        backward = step * proposal + PROPOSAL_FLOOR

        current = pixel_log_likelihood(X, Z, mu, sigma2) + dirichlet_logpdf(Z, lam * pi_rows)
        candidate = pixel_log_likelihood(X, proposal, mu, sigma2) + dirichlet_logpdf(proposal, lam * pi_rows)
        log_ratio = (candidate - current + dirichlet_logpdf(Z, backward) - dirichlet_logpdf(proposal, forward))
        accept = np.log(rng.random(len(Z))) < np.nan_to_num(log_ratio, nan=-np.inf)
        Z = np.where(accept[:, None], proposal, Z)
        return Z, float(accept.mean())

    def _update_documents(self, rng, Z, pi, doc, allowed, step):
        alpha, lam = self.params.alpha, self.params.lambda_pm
        forward = step * pi + PROPOSAL_FLOOR
        proposal = project_to_allowed(sample_dirichlet(rng, forward), allowed, self.params.epsilon)
        backward = step * proposal + PROPOSAL_FLOOR

        prior = np.full(pi.shape, alpha)
        current = dirichlet_logpdf(pi, prior) + _document_terms(Z, pi, doc, lam)
        candidate = dirichlet_logpdf(proposal, prior) + _document_terms(Z, proposal, doc, lam)
        log_ratio = candidate - current + dirichlet_logpdf(pi, backward) - dirichlet_logpdf(proposal, forward)
        accept = np.log(rng.random(len(pi))) < np.nan_to_num(log_ratio, nan=-np.inf)
        pi = np.where(accept[:, None], proposal, pi)
        return pi, float(accept.mean())


def run_spmlda(cube: HsiCube, superpixels: np.ndarray, labels: Optional[PartialLabelSet],
               params: SamplerParams) -> Tuple[np.ndarray, List[Endmember]]:
    result = SPMLDA(params).run(cube, superpixels, labels)
    return result.proportions, result.endmembers
