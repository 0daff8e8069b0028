"""Class-conditional Gaussian mixtures over detector logit vectors.

One full-covariance mixture is fitted per known class with expectation
maximisation; a detection's confidence signal for class i is its mixture
log-likelihood under that class's model. The number of components is shared
across classes and picked by how well the max log-likelihood separates
correct from misclassified validation detections (a proxy for open-set
errors, which are unavailable at fit time).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from . import _kernels
from .errors import ContractViolation, FitError, NumericalError

# Per-class seed stride in fit_all; keeps class RNG streams disjoint from
# restart offsets (restart r uses seed + r, r < n_restarts << stride).
_CLASS_SEED_STRIDE = 1_000_003


@dataclass(frozen=True)
class EmConfig:
    """EM hyperparameters. Defaults: stop when the relative log-likelihood
    improvement drops below 1e-5 or after 200 iterations; 1e-6 is added to
    covariance diagonals every M-step; best of 3 restarts wins."""

    max_iterations: int = 200
    convergence_tol: float = 1e-5
    covariance_regulariser: float = 1e-6
    n_restarts: int = 3
    seed: int = 0

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ContractViolation("max_iterations must be >= 1")
        if self.convergence_tol <= 0:
            raise ContractViolation("convergence_tol must be > 0")
        if self.covariance_regulariser < 0:
            raise ContractViolation("covariance_regulariser must be >= 0")
        if self.n_restarts < 1:
            raise ContractViolation("n_restarts must be >= 1")


@dataclass(frozen=True)
class GaussianComponent:
    """One mixture component: mean, full covariance, and weight."""

    mean: np.ndarray
    covariance: np.ndarray
    weight: float

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64)
        cov = np.asarray(self.covariance, dtype=np.float64)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "covariance", cov)
        if cov.shape != (mean.size, mean.size):
            raise ContractViolation(
                f"covariance shape {cov.shape} does not match mean dimension {mean.size}"
            )
        if not np.allclose(cov, cov.T, atol=1e-9, rtol=0.0):
            raise ContractViolation("covariance is not symmetric within 1e-9")
        if not self.weight > 0:
            raise ContractViolation("component weight must be > 0")

    @property
    def dim(self) -> int:
        return self.mean.size


@dataclass
class FitStats:
    """Diagnostics of the winning EM run."""

    final_log_likelihood: float
    iterations: int
    log_likelihood_history: list[float] = field(default_factory=list)
    restart: int = 0


class ClassGMM:
    """Gaussian mixture for a single known class.

    Cholesky factors of the component covariances are cached on
    construction so scoring never re-factorises.
    """

    def __init__(self, class_id: int, components: list[GaussianComponent], fit_stats: FitStats | None = None):
        if not components:
            raise ContractViolation("a ClassGMM needs at least one component")
        dims = {c.dim for c in components}
        if len(dims) != 1:
            raise ContractViolation(f"components disagree on dimensionality: {sorted(dims)}")
        total = sum(c.weight for c in components)
        if abs(total - 1.0) > 1e-9:
            raise ContractViolation(f"component weights sum to {total!r}, expected 1")
        self.class_id = class_id
        self.components = list(components)
        self.fit_stats = fit_stats
        self._means = np.stack([c.mean for c in components])
        self._chols = np.stack([_cholesky(c.covariance, j) for j, c in enumerate(components)])
        self._log_weights = np.log(np.array([c.weight for c in components]))

    @property
    def dim(self) -> int:
        return self.components[0].dim

    @property
    def n_components(self) -> int:
        return len(self.components)

    def log_likelihood(self, logit: np.ndarray) -> float:
        """Mixture log-likelihood of one logit vector (log-domain sum over
        components, finite for any finite input)."""
        return float(self.log_likelihoods(np.asarray(logit, dtype=np.float64)[None, :])[0])

    def log_likelihoods(self, logits: np.ndarray) -> np.ndarray:
        """Vectorised mixture log-likelihoods for an (n, d) batch."""
        logits = np.asarray(logits, dtype=np.float64)
        if logits.ndim != 2 or logits.shape[1] != self.dim:
            raise ContractViolation(
                f"expected (n, {self.dim}) logits for class {self.class_id}, got {logits.shape}"
            )
        dens = _kernels.component_log_densities(logits, self._means, self._chols)
        return logsumexp(dens + self._log_weights, axis=1)


def _cholesky(cov: np.ndarray, component: int) -> np.ndarray:
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        raise NumericalError(
            f"component {component}: covariance is not positive-definite "
            "(regularisation did not repair it)"
        ) from None


def gmm_log_likelihood(model: ClassGMM, logit: np.ndarray) -> float:
    """Log sum_j pi_j N(logit; mu_j, Sigma_j) for the given class model."""
    logit = np.asarray(logit, dtype=np.float64)
    if logit.shape != (model.dim,):
        raise ContractViolation(f"expected a {model.dim}-dim logit vector, got shape {logit.shape}")
    return model.log_likelihood(logit)


def _seed_means(samples: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """Farthest-point seeding: random first pick, then repeatedly the sample
    furthest from everything chosen so far (ties to the lowest index)."""
    n = samples.shape[0]
    chosen = [int(rng.integers(n))]
    if k > 1:
        d2 = np.sum((samples - samples[chosen[0]]) ** 2, axis=1)
        for _ in range(k - 1):
            nxt = int(np.argmax(d2))
            chosen.append(nxt)
            d2 = np.minimum(d2, np.sum((samples - samples[nxt]) ** 2, axis=1))
    return samples[chosen].copy()


def _em_run(samples: np.ndarray, k: int, config: EmConfig, seed: int):
    """One EM run from one seeding. Returns (means, covs, weights, history)."""
    n, d = samples.shape
    rng = np.random.default_rng(seed)
    reg = config.covariance_regulariser * np.eye(d)

    means = _seed_means(samples, k, rng)
    base_cov = np.atleast_2d(np.cov(samples, rowvar=False, bias=True)) + reg
    covs = np.repeat(base_cov[None, :, :], k, axis=0)
    weights = np.full(k, 1.0 / k)

    history: list[float] = []
    prev_ll = -np.inf
    for _ in range(config.max_iterations):
        chols = np.stack([_cholesky(covs[j], j) for j in range(k)])
        dens = _kernels.component_log_densities(samples, means, chols)
        weighted = dens + np.log(weights)
        row_ll = logsumexp(weighted, axis=1)

        total_ll = float(np.sum(row_ll))
        history.append(total_ll)

        resp = np.exp(weighted - row_ll[:, None])
        # Points whose every responsibility underflows get hard-assigned to
        # the nearest-mean component.
        dead = ~np.isfinite(row_ll)
        if np.any(dead):
            diffs = samples[dead, None, :] - means[None, :, :]
            nearest = np.argmin(np.einsum("ijk,ijk->ij", diffs, diffs), axis=1)
            resp[dead] = 0.0
            resp[dead, nearest] = 1.0

        nk = resp.sum(axis=0) + 10.0 * np.finfo(np.float64).eps
        weights = nk / nk.sum()
        means = (resp.T @ samples) / nk[:, None]
        for j in range(k):
            diff = samples - means[j]
            covs[j] = (resp[:, j] * diff.T) @ diff / nk[j] + reg
            covs[j] = 0.5 * (covs[j] + covs[j].T)

        rel = abs(total_ll - prev_ll) / max(abs(prev_ll), 1.0)
        if np.isfinite(prev_ll) and rel < config.convergence_tol:
            break
        prev_ll = total_ll

    return means, covs, weights, history


def fit_gmm(samples, n_components: int, config: EmConfig | None = None, class_id: int = 0) -> ClassGMM:
    """Fit one class mixture by EM, best final likelihood over restarts.

    samples: iterable of d-dim logit vectors (at least n_components of
    them). Raises FitError when there are too few samples and
    NumericalError when a component covariance cannot be factorised.
    """
    config = config or EmConfig()
    samples = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    if samples.size == 0:
        raise FitError(f"class {class_id}: no samples to fit")
    n, d = samples.shape
    if n_components < 1:
        raise ContractViolation("n_components must be >= 1")
    if n < n_components:
        raise FitError(
            f"class {class_id}: {n} samples cannot support {n_components} components"
        )

    best = None
    for r in range(config.n_restarts):
        means, covs, weights, history = _em_run(samples, n_components, config, config.seed + r)
        if best is None or history[-1] > best[4][-1]:
            best = (r, means, covs, weights, history)

    restart, means, covs, weights, history = best
    weights = weights / weights.sum()
    components = [
        GaussianComponent(mean=means[j], covariance=covs[j], weight=float(weights[j]))
        for j in range(n_components)
    ]
    stats = FitStats(
        final_log_likelihood=history[-1],
        iterations=len(history),
        log_likelihood_history=history,
        restart=restart,
    )
    return ClassGMM(class_id=class_id, components=components, fit_stats=stats)


class GMMSet:
    """One fitted mixture per known class over an N-dim logit space.

    Immutable once built; safe to share across threads. metadata records
    how the training logit sets were gated (theta_iou, theta_conf) and the
    selected component count.
    """

    def __init__(self, models: dict[int, ClassGMM], metadata: dict | None = None):
        if not models:
            raise ContractViolation("GMMSet needs at least one class model")
        dims = {m.dim for m in models.values()}
        if len(dims) != 1:
            raise ContractViolation(f"class models disagree on dimensionality: {sorted(dims)}")
        dim = dims.pop()
        expected = set(range(dim))
        if set(models) != expected:
            raise ContractViolation(
                f"expected one model per class id 0..{dim - 1}, got {sorted(models)}"
            )
        self.models = {i: models[i] for i in sorted(models)}
        self.dim = dim
        self.metadata = dict(metadata or {})

    def __getitem__(self, class_id: int) -> ClassGMM:
        return self.models[class_id]

    @property
    def n_classes(self) -> int:
        return len(self.models)

    def log_likelihood_matrix(self, logits: np.ndarray) -> np.ndarray:
        """Per-class mixture log-likelihoods for an (n, d) batch -> (n, N)."""
        logits = np.asarray(logits, dtype=np.float64)
        if logits.ndim != 2 or logits.shape[1] != self.dim:
            raise ContractViolation(f"expected (n, {self.dim}) logits, got {logits.shape}")
        out = np.empty((logits.shape[0], self.n_classes))
        for i, model in self.models.items():
            out[:, i] = model.log_likelihoods(logits)
        return out

    def to_dict(self) -> dict:
        return {
            "version": 1,
            "dim": self.dim,
            "classes": [
                {
                    "class_id": model.class_id,
                    "weights": [c.weight for c in model.components],
                    "means": [c.mean.tolist() for c in model.components],
                    "covariances": [c.covariance.tolist() for c in model.components],
                }
                for model in self.models.values()
            ],
            "meta": self.metadata,
        }

    def to_json(self) -> str:
        # json round-trips Python floats exactly (repr is shortest-exact)
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, doc: dict) -> "GMMSet":
        if doc.get("version") != 1:
            raise ContractViolation(f"unsupported GMMSet document version {doc.get('version')!r}")
        models = {}
        for entry in doc["classes"]:
            comps = [
                GaussianComponent(
                    mean=np.array(m, dtype=np.float64),
                    covariance=np.array(c, dtype=np.float64),
                    weight=float(w),
                )
                for w, m, c in zip(entry["weights"], entry["means"], entry["covariances"])
            ]
            models[int(entry["class_id"])] = ClassGMM(int(entry["class_id"]), comps)
        return cls(models, metadata=doc.get("meta"))

    @classmethod
    def from_json(cls, text: str) -> "GMMSet":
        return cls.from_dict(json.loads(text))


def fit_all(training_sets: dict[int, np.ndarray], n_components: int, config: EmConfig | None = None,
            metadata: dict | None = None) -> GMMSet:
    """Fit one ClassGMM per class, independently, with per-class seeds.

    training_sets maps class_id -> (n_i, d) logit arrays; every class in
    0..N-1 must be present and nonempty. Failures propagate with the class
    named.
    """
    config = config or EmConfig()
    models = {}
    for class_id in sorted(training_sets):
        samples = np.atleast_2d(np.asarray(training_sets[class_id], dtype=np.float64))
        if samples.size == 0:
            raise FitError(f"class {class_id}: empty training logit set")
        class_cfg = EmConfig(
            max_iterations=config.max_iterations,
            convergence_tol=config.convergence_tol,
            covariance_regulariser=config.covariance_regulariser,
            n_restarts=config.n_restarts,
            seed=config.seed + _CLASS_SEED_STRIDE * class_id,
        )
        models[class_id] = fit_gmm(samples, n_components, class_cfg, class_id=class_id)
    return GMMSet(models, metadata=metadata)


def select_components(candidate_counts, train_sets, val_correct, val_misclassified,
                      config: EmConfig | None = None):
    """Pick the shared component count whose max-log-likelihood score best
    separates correct from misclassified validation detections.

    val_correct / val_misclassified are lists of (logit, class) pairs; the
    class entry is carried for bookkeeping, scoring uses only the logit.
    Returns (selected_count, per_count_auroc) where per_count_auroc maps
    each non-skipped candidate to its AUROC. Ties go to the smaller count.
    """
    from .evaluation import auroc_from_scores

    candidates = list(candidate_counts)
    if not candidates:
        raise ContractViolation("candidate_counts must be nonempty")
    if not val_correct or not val_misclassified:
        raise ContractViolation("validation sets must be nonempty")

    pos = np.asarray([np.asarray(l, dtype=np.float64) for l, _ in val_correct])
    neg = np.asarray([np.asarray(l, dtype=np.float64) for l, _ in val_misclassified])

    per_count_auroc: dict[int, float] = {}
    skipped: dict[int, str] = {}
    best_count, best_auroc = None, -np.inf
    for count in sorted(candidates):
        try:
            gmm_set = fit_all(train_sets, count, config)
        except (FitError, NumericalError) as exc:
            skipped[count] = str(exc)
            continue
        pos_scores = gmm_set.log_likelihood_matrix(pos).max(axis=1)
        neg_scores = gmm_set.log_likelihood_matrix(neg).max(axis=1)
        value = auroc_from_scores(pos_scores, neg_scores)
        per_count_auroc[count] = value
        if value > best_auroc:  # strict: equal AUROC keeps the smaller count
            best_count, best_auroc = count, value

    if best_count is None:
        raise FitError(f"every candidate component count failed: {skipped}")
    return best_count, per_count_auroc
