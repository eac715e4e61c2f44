"""Objective evaluation and preference statistics.

* PCA (45 -> 15) followed by an isotropic Gaussian Parzen estimator whose
  bandwidth is picked by k-fold cross-validation; real test frames are scored
  under the density of generated frames.
* Sentence-level functionals (7 statistics x 45 channels) and a one-vs-rest
  linear SVM trained by subgradient descent, selected by macro-F1.
* Preference statistics: five-level option mapping, the hard-assignment
  proportion with ties counted for both videos, a z-test on the mean soft
  score, a one-sample proportion test and Cronbach's alpha.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy import stats
from scipy.special import logsumexp

from .dataset import TARGET_EMOTIONS
from .numcore import make_rng

# ---------------------------------------------------------------- PCA


@dataclass
class PcaModel:
    mean: np.ndarray
    components: np.ndarray  # k x D, orthonormal rows
    explained_variance_ratio: np.ndarray

    @property
    def k(self) -> int:
        return self.components.shape[0]

    def project(self, x):
        return (np.asarray(x, dtype=float) - self.mean) @ self.components.T

    def reconstruct(self, z):
        return np.asarray(z) @ self.components + self.mean


def fit_pca(samples, k: int = 15) -> PcaModel:
    """Top-``k`` eigenvectors of the sample covariance.

    Directions beyond the data rank come from the remaining (zero-eigenvalue)
    eigenvectors, so ``k`` orthonormal rows are always returned. Each row's
    sign is fixed so that its largest-magnitude entry is positive.
    """
    X = np.asarray(samples, dtype=float)
    if X.ndim != 2 or X.shape[0] <= k or X.shape[1] < k:
        raise ValueError(f"PCA needs N > k and D >= k samples, got {X.shape} for k={k}")
    mean = X.mean(axis=0)
    Xc = X - mean
    cov = Xc.T @ Xc / (X.shape[0] - 1)
    vals, vecs = np.linalg.eigh(cov)
    order = np.argsort(vals)[::-1]
    vals = np.clip(vals[order], 0.0, None)
    comps = vecs[:, order[:k]].T
    pivot = np.argmax(np.abs(comps), axis=1)
    comps *= np.sign(comps[np.arange(k), pivot])[:, None]
    total = vals.sum()
    ratio = vals[:k] / total if total > 0 else np.zeros(k)
    return PcaModel(mean, comps, ratio)


# ---------------------------------------------------------------- Parzen


@dataclass
class ParzenModel:
    support: np.ndarray
    bandwidth: float
    cv_scores: dict = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return self.support.shape[1]


def parzen_logpdf(support, h: float, test, chunk: int = 2048) -> np.ndarray:
    """Per-sample log density of an equal-weight Gaussian mixture."""
    S = np.asarray(support, dtype=float)
    Y = np.atleast_2d(np.asarray(test, dtype=float))
    if h <= 0:
        raise ValueError("bandwidth must be positive")
    N, d = S.shape
    const = -np.log(N) - 0.5 * d * np.log(2 * np.pi * h * h)
    s2 = (S * S).sum(1)
    out = np.empty(len(Y))
    for a in range(0, len(Y), chunk):
        y = Y[a:a + chunk]
        d2 = (y * y).sum(1)[:, None] + s2[None, :] - 2.0 * y @ S.T
        np.maximum(d2, 0.0, out=d2)
        out[a:a + chunk] = logsumexp(-d2 / (2 * h * h), axis=1) + const
    return out


def default_bandwidth_grid(support, n: int = 20) -> np.ndarray:
    """``n`` log-spaced values over [0.01, 10] times the mean nearest-neighbour distance."""
    S = np.asarray(support, dtype=float)
    from scipy.spatial import cKDTree

    dist, _ = cKDTree(S).query(S, k=2)
    nn = dist[:, 1].mean()
    if not nn > 0:
        nn = 1.0
    return nn * np.logspace(-2, 1, n)


def fit_parzen(generated, bandwidth_grid=None, folds: int = 5, seed: int = 0,
               max_support: int | None = None) -> ParzenModel:
    """Choose the bandwidth maximizing mean held-out log-likelihood over ``folds`` folds."""
    S = np.asarray(generated, dtype=float)
    if max_support is not None and len(S) > max_support:
        S = S[make_rng(seed, "parzen-subsample").choice(len(S), max_support, replace=False)]
    if len(S) < folds:
        raise ValueError(f"need at least {folds} samples for {folds}-fold CV")
    grid = default_bandwidth_grid(S) if bandwidth_grid is None else np.asarray(bandwidth_grid, float)
    if grid.size == 0:
        raise ValueError("empty bandwidth grid")
    if grid.size == 1:
        return ParzenModel(S, float(grid[0]), {})
    perm = make_rng(seed, "parzen-folds").permutation(len(S))
    parts = np.array_split(perm, folds)
    scores = {}
    for h in grid:
        ll = []
        for i in range(folds):
            train = np.concatenate([p for j, p in enumerate(parts) if j != i])
            ll.append(parzen_logpdf(S[train], h, S[parts[i]]).mean())
        scores[float(h)] = float(np.mean(ll))
    best = max(scores, key=lambda h: (scores[h], -h))
    return ParzenModel(S, best, scores)


def loglik(model: ParzenModel, test):
    """Mean and standard deviation of per-sample log-likelihoods."""
    lp = parzen_logpdf(model.support, model.bandwidth, test)
    return float(lp.mean()), float(lp.std())


def parzen_evaluate(generated_frames, test_frames, train_frames, k: int = 15, folds: int = 5,
                    seed: int = 0, max_support: int | None = 5000):
    """PCA fit on original training frames, Parzen fit on generated frames, scored on test frames."""
    pca = fit_pca(train_frames, k)
    model = fit_parzen(pca.project(generated_frames), folds=folds, seed=seed, max_support=max_support)
    mean, std = loglik(model, pca.project(test_frames))
    return {"loglik_mean": mean, "loglik_std": std, "bandwidth": model.bandwidth,
            "n_support": int(len(model.support)), "n_test": int(len(test_frames)),
            "pca_explained": float(pca.explained_variance_ratio.sum())}


# ---------------------------------------------------------------- functionals / classifier

FUNCTIONAL_NAMES = ("mean", "median", "q1", "q3", "min", "max", "std")


def functionals(seq) -> np.ndarray:
    """Seven statistics per channel, channel-major (channel 0's seven first).

    Quartiles use linear interpolation between order statistics; ``std``
    is the population standard deviation.
    """
    x = np.asarray(getattr(seq, "frames", seq), dtype=float)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ValueError("functionals need a T x C sequence with T >= 2")
    q1, med, q3 = np.quantile(x, [0.25, 0.5, 0.75], axis=0, method="linear")
    feats = np.stack([x.mean(0), med, q1, q3, x.min(0), x.max(0), x.std(0)], axis=1)
    return feats.reshape(-1)


def f1_score(precision: float, recall: float) -> float:
    return 0.0 if precision + recall == 0 else 2 * precision * recall / (precision + recall)


def classification_metrics(y_true, y_pred, classes) -> dict:
    """Accuracy and macro precision/recall/F1 over classes seen in truth or predictions."""
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    seen = set(y_true.tolist()) | set(y_pred.tolist())
    classes = [c for c in classes if c in seen]
    per = {}
    for c in classes:
        tp = np.sum((y_pred == c) & (y_true == c))
        fp = np.sum((y_pred == c) & (y_true != c))
        fn = np.sum((y_pred != c) & (y_true == c))
        p = tp / (tp + fp) if tp + fp else 0.0
        r = tp / (tp + fn) if tp + fn else 0.0
        per[c] = {"precision": float(p), "recall": float(r), "f1": float(f1_score(p, r))}
    return {
        "accuracy": float(np.mean(y_true == y_pred)) if len(y_true) else 0.0,
        "precision": float(np.mean([v["precision"] for v in per.values()])),
        "recall": float(np.mean([v["recall"] for v in per.values()])),
        "f1": float(np.mean([v["f1"] for v in per.values()])),
        "per_class": per,
    }


@dataclass
class EmotionClassifier:
    classes: tuple
    W: np.ndarray  # n_classes x D
    b: np.ndarray
    mu: np.ndarray
    sd: np.ndarray
    C: float
    val_metrics: dict = field(default_factory=dict)

    def decision(self, X):
        Z = (np.atleast_2d(X) - self.mu) / self.sd
        return Z @ self.W.T + self.b

    def predict(self, X):
        return np.asarray(self.classes)[np.argmax(self.decision(X), axis=1)]


def _fit_binary_svm(Z, y, C, epochs, rng):
    """Pegasos subgradient descent on ``lambda/2 |w|^2 + mean hinge``, ``lambda = 1/(C n)``.

    The bias is an extra constant input column. Returns the average of the
    iterates over the second half of training.
    """
    n, d = Z.shape
    A = np.hstack([Z, np.ones((n, 1))])
    lam = 1.0 / (C * n)
    w = np.zeros(d + 1)
    w_sum, k, t = np.zeros(d + 1), 0, 0
    for ep in range(epochs):
        for i in rng.permutation(n):
            t += 1
            eta = 1.0 / (lam * (t + 100))
            active = y[i] * (A[i] @ w) < 1
            w *= 1.0 - eta * lam
            if active:
                w += eta * y[i] * A[i]
            if ep >= epochs // 2:
                w_sum += w
                k += 1
    w = w_sum / k
    return w[:d], w[d]


def train_classifier(X_train, y_train, X_val=None, y_val=None, C_grid=(0.01, 0.1, 0.8, 10.0),
                     classes=TARGET_EMOTIONS, epochs: int = 60, seed: int = 0) -> EmotionClassifier:
    """One-vs-rest linear soft-margin SVMs; C chosen by validation macro-F1."""
    X = np.asarray(X_train, dtype=float)
    y = np.asarray(y_train)
    present = [c for c in classes if np.any(y == c)]
    if len(present) < 2:
        raise ValueError("classifier needs at least two classes in the training data")
    if X_val is None:
        X_val, y_val = X, y
    mu = X.mean(0)
    sd = X.std(0)
    sd[sd < 1e-12] = 1.0
    Z = (X - mu) / sd
    best = None
    for C in C_grid:
        W = np.zeros((len(classes), X.shape[1]))
        b = np.full(len(classes), -np.inf)
        for j, c in enumerate(classes):
            if c not in present:
                continue
            yy = np.where(y == c, 1.0, -1.0)
            W[j], b[j] = _fit_binary_svm(Z, yy, float(C), epochs, make_rng(seed, "svm", repr(float(C)), c))
        clf = EmotionClassifier(tuple(classes), W, b, mu, sd, float(C))
        m = classification_metrics(y_val, clf.predict(X_val), classes)
        clf.val_metrics = m
        if best is None or m["f1"] > best.val_metrics["f1"] + 1e-12:
            best = clf
    return best


# ---------------------------------------------------------------- preference statistics

PREFERENCE_OPTIONS = {
    "definitely-1": (100, 0),
    "moderately-1": (75, 25),
    "tie": (50, 50),
    "moderately-2": (25, 75),
    "definitely-2": (0, 100),
}
_OPTION_ALIASES = {"definitely video 1": "definitely-1", "moderately video 1": "moderately-1",
                   "same": "tie", "moderately video 2": "moderately-2",
                   "definitely video 2": "definitely-2"}
SCORES = (0, 25, 50, 75, 100)


def preference_soft(option: str):
    """Percent credited to (video 1, video 2) for a five-level answer."""
    key = str(option).strip().lower()
    key = _OPTION_ALIASES.get(key, key)
    if key not in PREFERENCE_OPTIONS:
        raise ValueError(f"invalid preference option {option!r}; expected one of {sorted(PREFERENCE_OPTIONS)}")
    return PREFERENCE_OPTIONS[key]


def _scores(rec) -> np.ndarray:
    e = np.asarray(rec, dtype=float).reshape(-1)
    if e.size == 0:
        raise ValueError("no evaluations")
    if not np.all(np.isin(e, SCORES)):
        raise ValueError("scores must come from {0, 25, 50, 75, 100}")
    return e


def hard_proportion(rec) -> float:
    """Share of votes for video 1; a tie gives one vote to each video."""
    e = _scores(rec)
    return float(np.sum(e >= 50) / (e.size + np.sum(e == 50)))


def z_test_mean50(rec):
    """Two-sided z-test of mean soft score against 50. Returns ``(z, p)``.

    With zero sample variance the p-value is 1 when the mean is exactly 50
    and 0 otherwise (z is then 0 or signed infinity).
    """
    e = _scores(rec)
    if e.size < 2:
        raise ValueError("z-test needs at least two evaluations")
    mean, sd = e.mean(), e.std(ddof=1)
    if sd == 0:
        return (0.0, 1.0) if mean == 50 else (float(np.copysign(np.inf, mean - 50)), 0.0)
    z = (mean - 50.0) / (sd / np.sqrt(e.size))
    return float(z), float(2 * stats.norm.sf(abs(z)))


def proportion_test(p_hat: float, n: int, continuity: bool = True):
    """One-sample two-sided proportion z-test against 0.5. Returns ``(z, p)``.

    ``continuity`` applies the usual 1/(2n) correction, which keeps the
    normal approximation close to the exact binomial test at small n.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    if not 0 <= p_hat <= 1:
        raise ValueError("p_hat must lie in [0, 1]")
    diff = p_hat - 0.5
    if continuity:
        diff = np.sign(diff) * max(abs(diff) - 0.5 / n, 0.0)
    z = diff / np.sqrt(0.25 / n)
    return float(z), float(min(1.0, 2 * stats.norm.sf(abs(z))))


def binomial_p_value(k: int, n: int) -> float:
    """Exact two-sided binomial test against 0.5."""
    return float(stats.binomtest(int(k), int(n), 0.5).pvalue)


def cronbach_alpha(ratings) -> float:
    """Alpha for an ``items x raters`` rating matrix (raters treated as items of the scale)."""
    R = np.asarray(ratings, dtype=float)
    if R.ndim != 2 or R.shape[1] < 2 or R.shape[0] < 2:
        raise ValueError("need a matrix with at least two subjects and two raters")
    k = R.shape[1]
    item_var = R.var(axis=0, ddof=1).sum()
    total_var = R.sum(axis=1).var(ddof=1)
    if total_var == 0:
        raise ValueError("total score variance is zero")
    return float(k / (k - 1) * (1 - item_var / total_var))


def preference_report(rec) -> dict:
    e = _scores(rec)
    p = hard_proportion(e)
    n_votes = int(e.size + np.sum(e == 50))
    z, pz = z_test_mean50(e) if e.size >= 2 else (float("nan"), float("nan"))
    zp, pp = proportion_test(p, n_votes)
    return {"n": int(e.size), "mean": float(e.mean()), "hard_proportion": p,
            "z_test": {"z": z, "p_value": pz},
            "proportion_test": {"z": zp, "p_value": pp, "n_votes": n_votes}}


# ---------------------------------------------------------------- misc


def roc_auc(pos_scores, neg_scores) -> float:
    """Area under the ROC curve (Mann-Whitney statistic with tie correction)."""
    pos = np.asarray(pos_scores, dtype=float).ravel()
    neg = np.asarray(neg_scores, dtype=float).ravel()
    if pos.size == 0 or neg.size == 0:
        raise ValueError("need both positive and negative scores")
    ranks = stats.rankdata(np.concatenate([pos, neg]))
    return float((ranks[:pos.size].sum() - pos.size * (pos.size + 1) / 2) / (pos.size * neg.size))


def mean_ccc(pred_seqs, true_seqs) -> float:
    """Mean over utterances of the per-channel CCC averaged across channels."""
    from .train.losses import ccc_per_channel

    vals = []
    for p, t in zip(pred_seqs, true_seqs):
        p = np.asarray(getattr(p, "frames", p))
        t = np.asarray(getattr(t, "frames", t))
        vals.append(np.nanmean(ccc_per_channel(p, t)))
    return float(np.mean(vals))


def variance_ratio(gen_seqs, real_seqs) -> np.ndarray:
    """Per-channel variance of generated frames over that of real frames (pooled)."""
    G = np.concatenate([np.asarray(getattr(s, "frames", s)) for s in gen_seqs])
    R = np.concatenate([np.asarray(getattr(s, "frames", s)) for s in real_seqs])
    return G.var(0) / np.maximum(R.var(0), 1e-300)


def write_report(report: dict, path) -> None:
    from pathlib import Path

    def _clean(o):
        if isinstance(o, dict):
            return {str(k): _clean(v) for k, v in o.items()}
        if isinstance(o, (list, tuple)):
            return [_clean(v) for v in o]
        if isinstance(o, np.ndarray):
            return _clean(o.tolist())
        if isinstance(o, (np.floating, np.integer)):
            return o.item()
        return o

    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(_clean(report), indent=2, sort_keys=True) + "\n")
