"""Two-dimensional projections for comparing real against synthetic samples.

Both sample sets are projected jointly in a single fit. PCA is fully
deterministic: each component's largest-magnitude loading is flipped
positive. t-SNE uses the standard Barnes-Hut formulation with a recorded
seed and perplexity.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError, ValidationError

PROJECTION_METHODS = ("pca", "tsne")


@dataclass(frozen=True)
class ProjectionResult:
    method: str
    real_coords: np.ndarray
    synth_coords: np.ndarray
    params: dict


def pca_components(points: np.ndarray, k: int = 2) -> tuple[np.ndarray, np.ndarray]:
    """Top-k principal directions (sign-fixed) and the centered data mean."""
    mean = points.mean(axis=0)
    centered = points - mean
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    comps = vt[:k].copy()
    for row in comps:
        lead = np.argmax(np.abs(row))
        if row[lead] < 0:
            row *= -1.0
    return comps, mean


def project_2d(
    real_set: np.ndarray,
    synth_set: np.ndarray,
    method: str = "pca",
    perplexity: float = 30.0,
    seed: int = 0,
) -> ProjectionResult:
    """Jointly project both sample sets to 2-D coordinates."""
    if method not in PROJECTION_METHODS:
        raise ValidationError(f"method must be one of {PROJECTION_METHODS}, got {method!r}")
    real = np.asarray(real_set, dtype=np.float64)
    synth = np.asarray(synth_set, dtype=np.float64)
    if real.ndim != 2 or synth.ndim != 2:
        raise ShapeError("sample sets must be 2-D (samples x features)")
    if real.shape[0] == 0 or synth.shape[0] == 0:
        raise ValidationError("both sample sets must be nonempty")
    if real.shape[1] != synth.shape[1]:
        raise ShapeError(
            f"dimensionality mismatch: {real.shape[1]} vs {synth.shape[1]}"
        )
    stacked = np.vstack([real, synth])
    if stacked.shape[0] < 2:
        raise ValidationError("need at least 2 samples for a 2-D projection")
    params: dict = {}
    if method == "pca":
        comps, mean = pca_components(stacked, k=2)
        coords = (stacked - mean) @ comps.T
        if coords.shape[1] < 2:  # single-feature input
            coords = np.hstack([coords, np.zeros((coords.shape[0], 1))])
    else:
        if perplexity >= stacked.shape[0]:
            raise ValidationError(
                f"perplexity {perplexity} must be below the sample count {stacked.shape[0]}"
            )
        from sklearn.manifold import TSNE

        tsne = TSNE(
            n_components=2,
            perplexity=perplexity,
            random_state=seed,
            init="pca",
            learning_rate="auto",
            method="barnes_hut",
        )
        coords = tsne.fit_transform(stacked).astype(np.float64)
        params = {"perplexity": perplexity, "seed": seed}
    if not np.isfinite(coords).all():
        raise ValidationError("projection produced non-finite coordinates")
    return ProjectionResult(
        method=method,
        real_coords=coords[: real.shape[0]],
        synth_coords=coords[real.shape[0] :],
        params=params,
    )
