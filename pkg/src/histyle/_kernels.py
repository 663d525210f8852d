"""Hot numeric kernels: numba-jitted fast path with a pure-numpy fallback.

The fallback is selected by setting HISTYLE_USE_NUMBA=0 (or automatically when
numba is not importable).  Both paths are kept importable so tests can assert
equivalence and benchmarks/bench_kernels.py can compare them.  All parallel
kernels write per-row results and reduce serially, so results are bit-stable
across thread counts.
"""

import os

import numpy as np

os.environ.setdefault("NUMBA_THREADING_LAYER", "workqueue")

USE_NUMBA = os.getenv("HISTYLE_USE_NUMBA", "1") == "1"

if USE_NUMBA:
    try:
        from numba import njit, prange
    except ImportError:  # pragma: no cover - numba is a declared dependency
        USE_NUMBA = False

_NUMBA_OPTS = dict(cache=True, fastmath=False)


# ---------------------------------------------------------------------------
# pairwise squared euclidean distances


def pairwise_sq_dists_numpy(x: np.ndarray) -> np.ndarray:
    """Dense (N, N) matrix of squared euclidean distances."""
    sq = np.sum(x * x, axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (x @ x.T)
    np.maximum(d2, 0.0, out=d2)
    np.fill_diagonal(d2, 0.0)
    return d2


if USE_NUMBA:

    @njit(parallel=True, **_NUMBA_OPTS)
    def _pairwise_sq_dists_nb(x):
        n, d = x.shape
        out = np.zeros((n, n))
        for i in prange(n):
            for j in range(n):
                if j == i:
                    continue
                s = 0.0
                for k in range(d):
                    diff = x[i, k] - x[j, k]
                    s += diff * diff
                out[i, j] = s
        return out

    def pairwise_sq_dists_numba(x: np.ndarray) -> np.ndarray:
        return _pairwise_sq_dists_nb(np.ascontiguousarray(x, dtype=np.float64))

else:
    pairwise_sq_dists_numba = None


# ---------------------------------------------------------------------------
# mean silhouette score, streaming (O(N*K) memory, no full distance matrix)


def silhouette_values_numpy(x: np.ndarray, labels: np.ndarray, n_clusters: int,
                            chunk: int = 512) -> np.ndarray:
    n = x.shape[0]
    counts = np.bincount(labels, minlength=n_clusters).astype(np.float64)
    onehot = np.zeros((n, n_clusters))
    onehot[np.arange(n), labels] = 1.0
    sq = np.sum(x * x, axis=1)
    scores = np.zeros(n)
    for start in range(0, n, chunk):
        stop = min(start + chunk, n)
        d2 = sq[start:stop, None] + sq[None, :] - 2.0 * (x[start:stop] @ x.T)
        np.maximum(d2, 0.0, out=d2)
        for i in range(start, stop):
            d2[i - start, i] = 0.0
        dist = np.sqrt(d2)
        sums = dist @ onehot  # (chunk, K) sum of distances into each cluster
        for i in range(start, stop):
            own = labels[i]
            if counts[own] <= 1:
                continue
            a = sums[i - start, own] / (counts[own] - 1.0)
            b = np.inf
            for c in range(n_clusters):
                if c != own and counts[c] > 0:
                    b = min(b, sums[i - start, c] / counts[c])
            m = max(a, b)
            scores[i] = 0.0 if m == 0.0 else (b - a) / m
    return scores


if USE_NUMBA:

    @njit(parallel=True, **_NUMBA_OPTS)
    def _silhouette_values_nb(x, labels, n_clusters):
        n, d = x.shape
        counts = np.zeros(n_clusters, dtype=np.int64)
        for i in range(n):
            counts[labels[i]] += 1
        scores = np.zeros(n)
        for i in prange(n):
            sums = np.zeros(n_clusters)
            for j in range(n):
                if j == i:
                    continue
                s = 0.0
                for k in range(d):
                    diff = x[i, k] - x[j, k]
                    s += diff * diff
                sums[labels[j]] += np.sqrt(s)
            own = labels[i]
            if counts[own] <= 1:
                scores[i] = 0.0
                continue
            a = sums[own] / (counts[own] - 1.0)
            b = np.inf
            for c in range(n_clusters):
                if c != own and counts[c] > 0:
                    cb = sums[c] / counts[c]
                    if cb < b:
                        b = cb
            m = a if a > b else b
            scores[i] = 0.0 if m == 0.0 else (b - a) / m
        return scores

    def silhouette_values_numba(x, labels, n_clusters):
        return _silhouette_values_nb(
            np.ascontiguousarray(x, dtype=np.float64),
            np.ascontiguousarray(labels, dtype=np.int64),
            n_clusters,
        )

else:
    silhouette_values_numba = None


# ---------------------------------------------------------------------------
# t-SNE: per-row precision search to hit a target perplexity


def perplexity_probs_numpy(d2: np.ndarray, perplexity: float,
                           n_steps: int = 64, tol: float = 1e-6) -> np.ndarray:
    n = d2.shape[0]
    target = np.log(perplexity)
    beta = np.ones(n)
    beta_lo = np.full(n, -np.inf)
    beta_hi = np.full(n, np.inf)
    eye = np.eye(n, dtype=bool)
    p = np.zeros((n, n))
    for _ in range(n_steps):
        p = np.exp(-d2 * beta[:, None])
        p[eye] = 0.0
        sum_p = np.maximum(np.sum(p, axis=1), 1e-300)
        entropy = np.log(sum_p) + beta * np.sum(d2 * p, axis=1) / sum_p
        diff = entropy - target
        if np.all(np.abs(diff) <= tol):
            break
        too_high = diff > 0
        beta_lo = np.where(too_high, beta, beta_lo)
        beta_hi = np.where(too_high, beta_hi, beta)
        beta = np.where(
            too_high,
            np.where(np.isinf(beta_hi), beta * 2.0, 0.5 * (beta + beta_hi)),
            np.where(np.isinf(beta_lo), beta * 0.5, 0.5 * (beta + beta_lo)),
        )
    p = np.exp(-d2 * beta[:, None])
    p[eye] = 0.0
    p /= np.maximum(np.sum(p, axis=1, keepdims=True), 1e-300)
    return p


if USE_NUMBA:

    @njit(parallel=True, **_NUMBA_OPTS)
    def _perplexity_probs_nb(d2, perplexity, n_steps, tol):
        n = d2.shape[0]
        target = np.log(perplexity)
        p = np.zeros((n, n))
        for i in prange(n):
            beta = 1.0
            lo = -np.inf
            hi = np.inf
            for _ in range(n_steps):
                sum_p = 0.0
                sum_dp = 0.0
                for j in range(n):
                    if j == i:
                        p[i, j] = 0.0
                        continue
                    v = np.exp(-d2[i, j] * beta)
                    p[i, j] = v
                    sum_p += v
                    sum_dp += d2[i, j] * v
                if sum_p < 1e-300:
                    sum_p = 1e-300
                entropy = np.log(sum_p) + beta * sum_dp / sum_p
                diff = entropy - target
                if abs(diff) <= tol:
                    break
                if diff > 0:
                    lo = beta
                    beta = beta * 2.0 if np.isinf(hi) else 0.5 * (beta + hi)
                else:
                    hi = beta
                    beta = beta * 0.5 if np.isinf(lo) else 0.5 * (beta + lo)
            total = 0.0
            for j in range(n):
                total += p[i, j]
            if total < 1e-300:
                total = 1e-300
            for j in range(n):
                p[i, j] /= total
        return p

    def perplexity_probs_numba(d2, perplexity, n_steps=64, tol=1e-6):
        return _perplexity_probs_nb(
            np.ascontiguousarray(d2, dtype=np.float64), perplexity, n_steps, tol
        )

else:
    perplexity_probs_numba = None


# ---------------------------------------------------------------------------
# t-SNE: gradient of the KL objective plus the KL value itself


def tsne_grad_numpy(y: np.ndarray, p: np.ndarray) -> tuple:
    d2 = pairwise_sq_dists_numpy(y)
    num = 1.0 / (1.0 + d2)
    np.fill_diagonal(num, 0.0)
    z = max(np.sum(num), 1e-300)
    q = np.maximum(num / z, 1e-300)
    pq = (p - q) * num
    grad = 4.0 * (np.diag(np.sum(pq, axis=1)) @ y - pq @ y)
    mask = p > 0
    kl = float(np.sum(p[mask] * np.log(p[mask] / q[mask])))
    return grad, kl


if USE_NUMBA:

    @njit(parallel=True, **_NUMBA_OPTS)
    def _tsne_grad_nb(y, p):
        n, dim = y.shape
        num = np.zeros((n, n))
        for i in prange(n):
            for j in range(n):
                if j == i:
                    continue
                s = 0.0
                for k in range(dim):
                    diff = y[i, k] - y[j, k]
                    s += diff * diff
                num[i, j] = 1.0 / (1.0 + s)
        z = 0.0
        for i in range(n):
            for j in range(n):
                z += num[i, j]
        if z < 1e-300:
            z = 1e-300
        grad = np.zeros((n, dim))
        kl_rows = np.zeros(n)
        for i in prange(n):
            acc = np.zeros(dim)
            kl = 0.0
            for j in range(n):
                if j == i:
                    continue
                q = num[i, j] / z
                if q < 1e-300:
                    q = 1e-300
                w = (p[i, j] - q) * num[i, j]
                for k in range(dim):
                    acc[k] += w * (y[i, k] - y[j, k])
                if p[i, j] > 0.0:
                    kl += p[i, j] * np.log(p[i, j] / q)
            for k in range(dim):
                grad[i, k] = 4.0 * acc[k]
            kl_rows[i] = kl
        kl_total = 0.0
        for i in range(n):
            kl_total += kl_rows[i]
        return grad, kl_total

    def tsne_grad_numba(y, p):
        grad, kl = _tsne_grad_nb(
            np.ascontiguousarray(y, dtype=np.float64),
            np.ascontiguousarray(p, dtype=np.float64),
        )
        return grad, float(kl)

else:
    tsne_grad_numba = None


# ---------------------------------------------------------------------------
# frame-level autocorrelation F0


def frame_f0_numpy(frames: np.ndarray, sr: int, lag_min: int, lag_max: int,
                   voicing_threshold: float, rms_floor: float) -> np.ndarray:
    n_frames, frame_len = frames.shape
    centered = frames - np.mean(frames, axis=1, keepdims=True)
    r0 = np.sum(centered * centered, axis=1)
    rms = np.sqrt(r0 / frame_len)
    n_lags = lag_max - lag_min + 1
    corr = np.zeros((n_frames, n_lags))
    for li, lag in enumerate(range(lag_min, lag_max + 1)):
        corr[:, li] = np.sum(centered[:, : frame_len - lag] * centered[:, lag:], axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        corr = np.where(r0[:, None] > 0.0, corr / r0[:, None], 0.0)
    f0 = np.zeros(n_frames)
    for i in range(n_frames):
        if rms[i] < rms_floor:
            continue
        best = int(np.argmax(corr[i]))
        peak = corr[i, best]
        if peak < voicing_threshold:
            continue
        lag = float(lag_min + best)
        if 0 < best < n_lags - 1:
            y0, y1, y2 = corr[i, best - 1], corr[i, best], corr[i, best + 1]
            denom = y0 - 2.0 * y1 + y2
            if denom != 0.0:
                shift = 0.5 * (y0 - y2) / denom
                if -1.0 < shift < 1.0:
                    lag += shift
        if lag > 0:
            f0[i] = sr / lag
    return f0


if USE_NUMBA:

    @njit(parallel=True, **_NUMBA_OPTS)
    def _frame_f0_nb(frames, sr, lag_min, lag_max, voicing_threshold, rms_floor):
        n_frames, frame_len = frames.shape
        f0 = np.zeros(n_frames)
        n_lags = lag_max - lag_min + 1
        for i in prange(n_frames):
            mean = 0.0
            for t in range(frame_len):
                mean += frames[i, t]
            mean /= frame_len
            r0 = 0.0
            for t in range(frame_len):
                v = frames[i, t] - mean
                r0 += v * v
            rms = np.sqrt(r0 / frame_len)
            if rms < rms_floor or r0 <= 0.0:
                continue
            corr = np.zeros(n_lags)
            for li in range(n_lags):
                lag = lag_min + li
                s = 0.0
                for t in range(frame_len - lag):
                    s += (frames[i, t] - mean) * (frames[i, t + lag] - mean)
                corr[li] = s / r0
            best = 0
            peak = corr[0]
            for li in range(1, n_lags):
                if corr[li] > peak:
                    peak = corr[li]
                    best = li
            if peak < voicing_threshold:
                continue
            lag = float(lag_min + best)
            if 0 < best < n_lags - 1:
                y0 = corr[best - 1]
                y1 = corr[best]
                y2 = corr[best + 1]
                denom = y0 - 2.0 * y1 + y2
                if denom != 0.0:
                    shift = 0.5 * (y0 - y2) / denom
                    if -1.0 < shift < 1.0:
                        lag += shift
            if lag > 0:
                f0[i] = sr / lag
        return f0

    def frame_f0_numba(frames, sr, lag_min, lag_max, voicing_threshold, rms_floor):
        return _frame_f0_nb(
            np.ascontiguousarray(frames, dtype=np.float64),
            float(sr), lag_min, lag_max, voicing_threshold, rms_floor,
        )

else:
    frame_f0_numba = None


# active implementations, selected once at import
if USE_NUMBA:
    pairwise_sq_dists = pairwise_sq_dists_numba
    silhouette_values = silhouette_values_numba
    perplexity_probs = perplexity_probs_numba
    tsne_grad = tsne_grad_numba
    frame_f0 = frame_f0_numba
else:
    pairwise_sq_dists = pairwise_sq_dists_numpy
    silhouette_values = silhouette_values_numpy
    perplexity_probs = perplexity_probs_numpy
    tsne_grad = tsne_grad_numpy
    frame_f0 = frame_f0_numpy
