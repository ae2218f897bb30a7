"""Deterministic synthetic rater playback shared by the fixture generator
and the acceptance suite.

Four raters rank six variants for 28 queries under two criteria. Each rating
starts from the rater's preference order and applies two seeded adjacent
transpositions, so the design has a strong but noisy image-type effect.
"""

import numpy as np
import pandas as pd

PLAYBACK_VARIANTS = ["3T", "7T", "unet7T", "gan7T", "watnet7T", "vnet7T"]
BASE_PREFERENCE = ["gan7T", "unet7T", "7T", "3T", "watnet7T", "vnet7T"]
PLAYBACK_RATERS = [f"rater{i}" for i in range(4)]
PLAYBACK_CRITERIA = ["Rank based on how good the image looks.",
                     "Rank based on how detailed the image is."]


def playback_ranks(rater_index: int, query_index: int, criterion_index: int) -> dict:
    """Variant -> rank mapping for one (rater, query, criterion) task."""
    rng = np.random.default_rng(9000 + 97 * rater_index + 13 * query_index + criterion_index)
    order = list(BASE_PREFERENCE)
    for _ in range(2):
        i = int(rng.integers(0, len(order) - 1))
        order[i], order[i + 1] = order[i + 1], order[i]
    return {variant: position + 1 for position, variant in enumerate(order)}


def playback_rank_table(n_queries: int = 28, query_ids=None) -> pd.DataFrame:
    """The full ground-truth rank table the playback should export."""
    if query_ids is None:
        query_ids = [f"q{q:03d}" for q in range(n_queries)]
    rows = []
    for r, rater in enumerate(PLAYBACK_RATERS):
        for q, query_id in enumerate(query_ids):
            for c, criterion in enumerate(PLAYBACK_CRITERIA):
                for variant, rank in playback_ranks(r, q, c).items():
                    rows.append({"rater": rater, "query": query_id,
                                 "criterion": criterion, "image_type": variant,
                                 "rank": rank})
    return pd.DataFrame(rows)
