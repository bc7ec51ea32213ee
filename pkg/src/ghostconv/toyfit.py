"""Fit a single depthwise kernel mapping one feature map onto another.

For a source map ``x`` and target ``t`` of the same size, the best ``d x d``
kernel under "same" zero padding is the least-squares solution over the
``d*d`` shifted copies of ``x``. The normal equations are at most 49 x 49,
so they are solved directly.
"""
import csv
import itertools
from dataclasses import dataclass

import numpy as np

RIDGE = 1e-8
DEFAULT_DS = (1, 3, 5, 7)


@dataclass
class FeaturePair:
    source: np.ndarray
    target: np.ndarray
    tag: str = ""
    similarity: float = float("nan")

    def __post_init__(self):
        self.source = np.asarray(self.source, dtype=np.float64)
        self.target = np.asarray(self.target, dtype=np.float64)
        if self.source.ndim != 2 or self.source.shape != self.target.shape:
            raise ValueError(f"pair maps must be equal 2-D shapes, got {self.source.shape} and {self.target.shape}")
        if not (np.isfinite(self.source).all() and np.isfinite(self.target).all()):
            raise ValueError("pair maps must be finite")


@dataclass
class KernelFit:
    kernel: np.ndarray
    mse: float
    degenerate: bool = False


def shifted_regressors(source, d):
    """Design matrix whose column ``i*d + j`` is the source seen through kernel tap ``(i, j)``."""
    h, w = source.shape
    r = d // 2
    padded = np.pad(source, r)
    cols = np.empty((h * w, d * d))
    for i in range(d):
        for j in range(d):
            cols[:, i * d + j] = padded[i : i + h, j : j + w].ravel()
    return cols


def apply_kernel(source, kernel):
    """Cross-correlate ``source`` with ``kernel`` under same zero padding."""
    d = kernel.shape[0]
    return (shifted_regressors(np.asarray(source, dtype=np.float64), d) @ kernel.ravel()).reshape(source.shape)


def fit_depthwise(pair, d):
    """Least-squares ``d x d`` kernel and its MSE.

    A singular normal matrix (e.g. an all-zero source) is solved with a
    ridge of ``1e-8`` and flagged as degenerate.
    """
    if d < 1 or d % 2 == 0:
        raise ValueError(f"kernel size must be odd and positive, got {d}")
    if d > min(pair.source.shape):
        raise ValueError(f"kernel size {d} exceeds map size {pair.source.shape}")
    a = shifted_regressors(pair.source, d)
    t = pair.target.ravel()
    gram = a.T @ a
    rhs = a.T @ t
    degenerate = False
    try:
        if np.linalg.cond(gram) > 1e12:
            raise np.linalg.LinAlgError("ill-conditioned normal matrix")
        coef = np.linalg.solve(gram, rhs)
    except np.linalg.LinAlgError:
        degenerate = True
        coef = np.linalg.solve(gram + RIDGE * np.eye(d * d), rhs)
    resid = t - a @ coef
    return KernelFit(coef.reshape(d, d), float(np.mean(resid**2)), degenerate)


def embed_kernel(kernel, d):
    """Zero-border ``kernel`` out to ``d x d``, keeping it centred."""
    k = kernel.shape[0]
    off = (d - k) // 2
    out = np.zeros((d, d))
    out[off : off + k, off : off + k] = kernel
    return out


def _mse(pair, kernel):
    return float(np.mean((apply_kernel(pair.source, kernel) - pair.target) ** 2))


def fit_sweep(pair, ds=DEFAULT_DS):
    """Fits for increasing kernel sizes.

    A smaller kernel zero-bordered to the larger size is itself a candidate
    for the larger fit; whichever of the two has lower MSE is kept, so
    round-off can never make a larger kernel look worse.
    """
    fits = {}
    best_prev = None
    for d in sorted(ds):
        fit = fit_depthwise(pair, d)
        if best_prev is not None:
            carried = embed_kernel(best_prev.kernel, d)
            carried_mse = _mse(pair, carried)
            if carried_mse < fit.mse:
                fit = KernelFit(carried, carried_mse, fit.degenerate)
        fits[d] = fit
        best_prev = fit
    return fits


def mse_sweep(pairs, ds=DEFAULT_DS):
    """Rows of ``(pair_id, d, mse)``, one per pair and kernel size."""
    if not pairs:
        raise ValueError("mse_sweep needs at least one pair")
    rows = []
    for pid, pair in enumerate(pairs):
        for d, fit in fit_sweep(pair, ds).items():
            rows.append((pid, d, fit.mse))
    return rows


def sweep_table(rows):
    """Pivot :func:`mse_sweep` rows into ``{pair_id: [mse for each d]}``."""
    table = {}
    for pid, _, mse in sorted(rows, key=lambda r: (r[0], r[1])):
        table.setdefault(pid, []).append(mse)
    return table


def write_sweep_csv(path, rows):
    with open(path, "w", newline="") as f:
        wr = csv.writer(f)
        wr.writerow(["pair_id", "d", "mse"])
        for pid, d, mse in rows:
            wr.writerow([pid, d, repr(mse)])


def fit_gradient_descent(pair, d, iters=20000, tol=1e-14):
    """Slow reference fit by plain gradient descent on the MSE."""
    a = shifted_regressors(pair.source, d)
    t = pair.target.ravel()
    n = len(t)
    step = n / np.linalg.eigvalsh(a.T @ a).max()
    coef = np.zeros(d * d)
    prev = np.inf
    for _ in range(iters):
        resid = a @ coef - t
        mse = float(resid @ resid) / n
        if prev - mse < tol * max(mse, 1e-300):
            break
        prev = mse
        coef -= step * (a.T @ resid) / n
    resid = a @ coef - t
    return KernelFit(coef.reshape(d, d), float(resid @ resid) / n)


def normalized_cross_correlation(a, b):
    a = a.ravel() - a.mean()
    b = b.ravel() - b.mean()
    denom = np.sqrt((a @ a) * (b @ b))
    return float(a @ b / denom) if denom > 0 else 0.0


def harvest_pairs(net, images, layer, top_k=3, sample=0):
    """Most-similar channel pairs in the output of ``layer``.

    Runs an eval-mode forward pass, ranks all channel pairs of image
    ``sample`` by normalized cross-correlation and returns the ``top_k``
    best as :class:`FeaturePair` objects (lower channel index as source).
    """
    n_layers = len(net)
    if not 0 <= layer < n_layers:
        raise IndexError(f"layer {layer} out of range for a {n_layers}-layer network")
    out = net.forward_layers(images, mode="eval")[layer]
    if out.ndim != 4 or out.shape[1] < 2:
        raise ValueError(f"layer {layer} output {out.shape} has fewer than two feature maps")
    maps = out[sample].astype(np.float64)
    scored = []
    for i, j in itertools.combinations(range(maps.shape[0]), 2):
        scored.append((normalized_cross_correlation(maps[i], maps[j]), i, j))
    scored.sort(key=lambda t: (-t[0], t[1], t[2]))
    return [
        FeaturePair(maps[i], maps[j], f"layer={layer} sample={sample} channels={i},{j}", score)
        for score, i, j in scored[:top_k]
    ]
