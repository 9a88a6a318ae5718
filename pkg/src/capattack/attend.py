"""Attention heatmap acquisition and surrogate-category selection.

The heatmap shrinks the attack's search space: per-element search ranges
get scaled by the pixel's contribution to the target text. Heatmaps come
from a file or from the model bridge; either way they are validated,
resampled to the image resolution, and their summary statistics logged
(real saliency maps typically have mean and median around 0.3-0.4).
"""

from __future__ import annotations

import logging
import os

import numpy as np

from .image import as_image, load_heatmap, resample_heatmap

log = logging.getLogger(__name__)

CATEGORY_TEMPLATE = "a photo of "


def load_categories(path: str | os.PathLike) -> list[str]:
    """Read a category list: one name per line, blank lines skipped."""
    with open(path, encoding="utf-8") as fh:
        names = [line.strip() for line in fh]
    return [name for name in names if name]


def choose_category(target_text: str, categories: list[str], embed) -> str:
    """Pick the category whose templated text ("a photo of " + name) has the
    highest cosine similarity to the target text embedding.

    Ties break to the lowest list index. Invariant under positive scaling
    of any embedding.
    """
    if not categories:
        raise ValueError("category list is empty")
    target_vec = np.asarray(embed(target_text), dtype=np.float64)
    best_name = None
    best_score = -np.inf
    for name in categories:
        vec = np.asarray(embed(CATEGORY_TEMPLATE + name), dtype=np.float64)
        score = _cosine(target_vec, vec)
        if score > best_score:
            best_score = score
            best_name = name
    return best_name


def _cosine(u: np.ndarray, v: np.ndarray) -> float:
    nu = float(np.linalg.norm(u))
    nv = float(np.linalg.norm(v))
    if nu == 0.0 or nv == 0.0:
        return -1.0
    return float(u @ v) / (nu * nv)


def fetch_heatmap(image, target_text: str, source) -> np.ndarray:
    """Obtain the attention heatmap for `target_text` on `image`.

    `source` is either a path to an AAH1 file or a bridge client exposing
    ``heatmap(image, target_text)``. The result is validated, bilinearly
    resampled to the image resolution, and its mean/median logged. An
    all-zero map degenerates the attack to no search space and is warned
    about but returned as is.
    """
    img = as_image(image)
    if hasattr(source, "heatmap"):
        hm = source.heatmap(img, target_text)
    else:
        hm = load_heatmap(source)
    hm = resample_heatmap(hm, img.shape[1], img.shape[0])
    mean = float(hm.mean())
    median = float(np.median(hm))
    log.info("attention heatmap stats: mean=%.4f median=%.4f", mean, median)
    if not hm.any():
        log.warning("attention heatmap is all zeros; the masked search space is empty")
    return hm
