"""Gene ranking by the between-group / within-group sum-of-squares ratio."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core_data import Dataset
from .errors import DataError


@dataclass(frozen=True)
class GeneRanking:
    """``ratios[j]`` is gene j's BSS/WSS (``inf`` for zero WSS with positive BSS).

    ``order`` lists gene indices by descending ratio, ties by ascending index.
    """

    ratios: np.ndarray
    order: np.ndarray

    def rank_of(self) -> np.ndarray:
        """1-based rank per gene."""
        ranks = np.empty(self.order.size, dtype=int)
        ranks[self.order] = np.arange(1, self.order.size + 1)
        return ranks


def bss_wss(x: np.ndarray, labels: np.ndarray, class_count: int) -> tuple[np.ndarray, np.ndarray]:
    onehot = np.eye(class_count)[labels]
    sizes = onehot.sum(axis=0)
    class_means = (onehot.T @ x) / sizes[:, None]
    overall = x.mean(axis=0)
    bss = sizes @ (class_means - overall) ** 2
    wss = ((x - class_means[labels]) ** 2).sum(axis=0)
    return bss, wss


def bss_wss_ranking(d: Dataset) -> GeneRanking:
    x = d.x.require_complete("BSS/WSS ranking")
    d.y.require_all_classes()
    bss, wss = bss_wss(x, d.y.labels, d.y.class_count)
    # WSS below rounding noise of the total counts as exactly zero
    zero_wss = wss <= 1e-14 * (bss + wss)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = np.where(zero_wss, np.where(bss > 0, np.inf, 0.0), bss / wss)
    order = np.lexsort((np.arange(ratios.size), -ratios))
    return GeneRanking(ratios, order)


def top_indices(ranking: GeneRanking, p_keep: int) -> np.ndarray:
    """Indices of the ``p_keep`` best genes, in original column order."""
    total = ranking.order.size
    if not 1 <= p_keep <= total:
        raise DataError(f"p_keep={p_keep} out of range [1, {total}]")
    return np.sort(ranking.order[:p_keep])


def select_top(d: Dataset, ranking: GeneRanking, p_keep: int) -> Dataset:
    return d.with_x(d.x.take_columns(top_indices(ranking, p_keep)))
