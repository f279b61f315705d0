"""SVG charts: norm histograms per report and Bessel-ratio curves."""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .special import bessel_ratio_approx, bessel_ratio_bounds  # noqa: E402
from .vmf import init_class_weights, make_init_plan  # noqa: E402

plt.rcParams["svg.hashsalt"] = "vmfloss"


def _save(fig, path) -> None:
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def norm_histogram(norms, correct, path, title: str = "") -> None:
    """Overlaid histograms of embedding norms for correct / incorrect items."""
    norms = np.asarray(norms, dtype=float)
    correct = np.asarray(correct, dtype=bool)
    fig, ax = plt.subplots(figsize=(6, 4))
    bins = np.histogram_bin_edges(norms, bins=40)
    ax.hist(norms[correct], bins=bins, alpha=0.6, density=True, label=f"correct ({correct.sum()})")
    if (~correct).any():
        ax.hist(norms[~correct], bins=bins, alpha=0.6, density=True,
                label=f"incorrect ({(~correct).sum()})")
    ax.set_xlabel("embedding norm")
    ax.set_ylabel("density")
    ax.set_title(title)
    ax.legend()
    _save(fig, path)


def init_points(dims, lam: float = 0.4, count: int = 1000, seed: int = 0):
    """(dim, mean weight norm, mean midpoint ratio) for freshly initialized weights."""
    rng = np.random.default_rng(seed)
    out = []
    for n in dims:
        plan = make_init_plan(lam, n, 1.0)
        norms = np.linalg.norm(init_class_weights(plan, count, rng), axis=1)
        out.append((n, float(norms.mean()), float(np.mean(bessel_ratio_approx(n, norms)))))
    return out


def bessel_curves(dims, path, lam: float | None = 0.4, kappa_max: float = 1000.0) -> None:
    """Midpoint Bessel ratio against kappa for several dimensions, with the
    bracket shaded and (optionally) the initializer's points overlaid."""
    kappa = np.logspace(-2, np.log10(kappa_max), 400)
    fig, ax = plt.subplots(figsize=(6, 4))
    for n in dims:
        br = bessel_ratio_bounds(n, kappa)
        line, = ax.plot(kappa, bessel_ratio_approx(n, kappa), label=f"n = {n}")
        ax.fill_between(kappa, br.lower, br.upper, color=line.get_color(), alpha=0.2)
    if lam is not None:
        for n, k, r in init_points(dims, lam):
            ax.plot([k], [r], "ko", ms=4)
        ax.axhline(lam, color="grey", ls=":", lw=1)
    ax.set_xscale("log")
    ax.set_xlabel("kappa")
    ax.set_ylabel("I_{n/2}(kappa) / I_{n/2-1}(kappa)")
    ax.legend()
    _save(fig, path)
