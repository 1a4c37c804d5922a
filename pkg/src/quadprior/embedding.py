"""Exact 2-D t-SNE for visualizing feature-space domain shift.

High-dimensional affinities use per-row Gaussian kernels whose bandwidths are
bisected until each row's perplexity (exp of its Shannon entropy) hits the
target; the low-dimensional side uses the Student-t kernel. Optimization is
plain gradient descent with early exaggeration and a momentum switch. O(n^2)
throughout -- fine for a few thousand points, which is all this is for.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

MACHINE_EPS = float(np.finfo(np.float64).eps)


class EmbeddingError(ValueError):
    """Bad feature inputs or a diverged optimization."""


@dataclass
class FeatureSet:
    domain_label: str
    vectors: np.ndarray  # (n, d)

    def __post_init__(self):
        arr = np.asarray(self.vectors, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[0] < 1:
            raise EmbeddingError(
                f"domain {self.domain_label!r}: vectors must be (n >= 1, d), got {arr.shape}"
            )
        if not np.all(np.isfinite(arr)):
            raise EmbeddingError(f"domain {self.domain_label!r}: non-finite feature values")
        self.vectors = arr


@dataclass
class TsneConfig:
    perplexity: float = 30.0
    iterations: int = 1000
    early_exaggeration: float = 12.0
    exaggeration_iters: int = 250
    learning_rate: float = 200.0
    momentum_start: float = 0.5
    momentum_final: float = 0.8
    momentum_switch_iter: int = 250
    seed: int = 0

    def __post_init__(self):
        if self.perplexity <= 1.0:
            raise EmbeddingError("perplexity must be > 1")
        if self.iterations < 1:
            raise EmbeddingError("iterations must be >= 1")


@dataclass
class EmbeddingResult:
    points: np.ndarray  # (n, 2)
    domains: list[str]
    kl_history: list[float]


def _squared_distances(x: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore", invalid="ignore"):
        sq = np.sum(x * x, axis=1)
        d = sq[:, None] + sq[None, :] - 2.0 * (x @ x.T)
    np.maximum(d, 0.0, out=d)
    np.fill_diagonal(d, 0.0)
    return d


def _row_conditional(dist_row: np.ndarray, beta: float) -> tuple[np.ndarray, float]:
    """Conditional probabilities and perplexity for one row at bandwidth beta.

    ``dist_row`` holds the squared distances to the other points (self
    excluded); shifting by the minimum keeps the exponentials in range.
    """
    shifted = dist_row - dist_row.min()
    p = np.exp(-shifted * beta)
    total = p.sum()
    if total <= 0.0:
        return np.zeros_like(p), 1.0
    p /= total
    nz = p > 0
    entropy = float(-np.sum(p[nz] * np.log(p[nz])))
    return p, float(np.exp(entropy))


def conditional_affinities(
    x: np.ndarray, perplexity: float, tol: float = 1e-5, max_iter: int = 200
) -> np.ndarray:
    """Row-conditional affinity matrix with each row's perplexity on target.

    Raises EmbeddingError naming the rows whose perplexity cannot be reached
    (duplicate points are the usual cause). The n == 2 case is forced by
    normalization and accepted as-is.
    """
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    if not 0.0 < perplexity < n:
        raise EmbeddingError(f"perplexity must lie in (0, n={n})")
    d = _squared_distances(x)
    p_cond = np.zeros((n, n))
    failed = []
    for i in range(n):
        row = np.delete(d[i], i)
        beta, beta_min, beta_max = 1.0, 0.0, np.inf
        p, perp = _row_conditional(row, beta)
        for _ in range(max_iter):
            if abs(perp - perplexity) <= tol:
                break
            if perp > perplexity:
                beta_min = beta
                beta = beta * 2.0 if np.isinf(beta_max) else (beta + beta_max) / 2.0
            else:
                beta_max = beta
                beta = (beta + beta_min) / 2.0
            p, perp = _row_conditional(row, beta)
        if abs(perp - perplexity) > tol and n > 2:
            failed.append(i)
        p_cond[i, np.arange(n) != i] = p
    if failed:
        dup_note = ""
        if any(np.min(np.delete(d[i], i)) == 0.0 for i in failed):
            dup_note = " (duplicate points make the target perplexity unattainable)"
        raise EmbeddingError(
            f"perplexity search failed for rows {failed[:10]}"
            + ("..." if len(failed) > 10 else "")
            + dup_note
        )
    return p_cond


def affinities(x: np.ndarray, perplexity: float, tol: float = 1e-5) -> np.ndarray:
    """Symmetrized joint affinities P: non-negative, symmetric, sums to 1."""
    p_cond = conditional_affinities(x, perplexity, tol)
    n = p_cond.shape[0]
    return (p_cond + p_cond.T) / (2.0 * n)


def _student_t_q(y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    w = 1.0 / (1.0 + _squared_distances(y))
    np.fill_diagonal(w, 0.0)
    q = np.maximum(w / w.sum(), MACHINE_EPS)
    return w, q


def _kl(p: np.ndarray, q: np.ndarray) -> float:
    mask = p > 0
    return float(np.sum(p[mask] * np.log(p[mask] / q[mask])))


def kl_and_gradient(p: np.ndarray, y: np.ndarray) -> tuple[float, np.ndarray]:
    """KL(P || Q) and its gradient w.r.t. the 2-D embedding ``y``.

    Q is the normalized Student-t kernel; grad_i = 4 sum_j (p - q) w (y_i - y_j).
    """
    w, q = _student_t_q(y)
    pq_w = (p - q) * w
    grad = 4.0 * (np.diag(pq_w.sum(axis=1)) - pq_w) @ y
    return _kl(p, q), grad


def tsne(features: list[FeatureSet], config: TsneConfig) -> EmbeddingResult:
    """Embed the pooled feature sets into 2-D; deterministic for a fixed seed."""
    if not features:
        raise EmbeddingError("no feature sets given")
    dims = {fs.vectors.shape[1] for fs in features}
    if len(dims) != 1:
        raise EmbeddingError(f"feature sets disagree on dimension: {sorted(dims)}")
    x = np.vstack([fs.vectors for fs in features])
    domains = [fs.domain_label for fs in features for _ in range(fs.vectors.shape[0])]
    n = x.shape[0]
    if n < 4:
        raise EmbeddingError(f"need at least 4 pooled points, got {n}")
    if config.perplexity >= n:
        raise EmbeddingError(f"perplexity {config.perplexity} must be < n={n}")

    p = affinities(x, config.perplexity)
    rng = np.random.default_rng(config.seed)
    y = rng.normal(0.0, 1e-4, size=(n, 2))
    velocity = np.zeros_like(y)
    kl_history: list[float] = []

    for it in range(config.iterations):
        p_eff = p * config.early_exaggeration if it < config.exaggeration_iters else p
        _, grad = kl_and_gradient(p_eff, y)
        momentum = (
            config.momentum_start if it < config.momentum_switch_iter else config.momentum_final
        )
        velocity = momentum * velocity - config.learning_rate * grad
        y = y + velocity
        y = y - y.mean(axis=0)
        if not np.all(np.isfinite(y)):
            raise EmbeddingError(f"embedding overflowed at iteration {it}")
        kl = _kl(p, _student_t_q(y)[1])
        if not np.isfinite(kl):
            raise EmbeddingError(f"embedding overflowed at iteration {it}")
        kl_history.append(kl)
    return EmbeddingResult(y, domains, kl_history)


def load_features(path: str | Path) -> list[FeatureSet]:
    """Read feature rows from CSV (with a 'domain' column) or JSON
    ([{domain, vector}, ...]); rows are grouped by domain label."""
    path = Path(path)
    rows: list[tuple[str, list[float]]] = []
    if path.suffix.lower() == ".json":
        data = json.loads(path.read_text())
        if not isinstance(data, list):
            raise EmbeddingError(f"{path}: expected a JSON array")
        for i, entry in enumerate(data):
            try:
                rows.append((str(entry["domain"]), [float(v) for v in entry["vector"]]))
            except (KeyError, TypeError, ValueError) as e:
                raise EmbeddingError(f"{path}: entry {i}: {e}") from e
    else:
        with open(path, newline="") as f:
            reader = csv.DictReader(f)
            if reader.fieldnames is None or "domain" not in reader.fieldnames:
                raise EmbeddingError(f"{path}: a 'domain' column is required")
            value_cols = [c for c in reader.fieldnames if c != "domain"]
            for i, record in enumerate(reader):
                try:
                    rows.append(
                        (record["domain"], [float(record[c]) for c in value_cols])
                    )
                except (TypeError, ValueError) as e:
                    raise EmbeddingError(f"{path}: row {i}: {e}") from e
    if not rows:
        raise EmbeddingError(f"{path}: no feature rows")

    by_domain: dict[str, list[list[float]]] = {}
    order: list[str] = []
    for domain, vec in rows:
        if domain not in by_domain:
            by_domain[domain] = []
            order.append(domain)
        by_domain[domain].append(vec)
    return [FeatureSet(d, np.asarray(by_domain[d])) for d in order]


def save_embedding_csv(path: str | Path, result: EmbeddingResult) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["x", "y", "domain"])
        for (px, py), domain in zip(result.points, result.domains):
            writer.writerow([repr(float(px)), repr(float(py)), domain])
