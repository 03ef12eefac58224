"""Sentiment-based baseline inputs.

Classifying articles is out of scope here: labels arrive pre-computed in a
CSV (date, article_id, label) with label in {negative, neutral, positive}.
Two derived inputs feed the baseline models: a daily net-sentiment index
for the feature-based route, and 1-dim label tokens (1/2/3) for the
attention route.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

LABEL_VALUES = {"negative": 1, "neutral": 2, "positive": 3}


@dataclass
class SentimentCounts:
    date: str
    positive: int = 0
    negative: int = 0
    neutral: int = 0

    def __post_init__(self):
        if min(self.positive, self.negative, self.neutral) < 0:
            raise ValueError("counts must be nonnegative")

    def total(self) -> int:
        return self.positive + self.negative + self.neutral


def sentiment_index(counts: SentimentCounts) -> float:
    """Net sentiment (positive minus negative) over the day's article count.

    Always in [-1, 1].
    """
    total = counts.total()
    if total < 1:
        raise ValueError("no articles")
    return (counts.positive - counts.negative) / total


def labels_to_tokens(labels, n_max: int):
    """Map article labels to 1-dim token values 1/2/3, padded to n_max.

    Accepts label names or numeric values; article order is preserved. An
    empty day yields an all-pad batch.
    """
    values = []
    for lab in labels:
        if isinstance(lab, str):
            if lab not in LABEL_VALUES:
                raise ValueError(f"unknown sentiment label {lab!r}")
            values.append(LABEL_VALUES[lab])
        else:
            v = int(lab)
            if v not in (1, 2, 3):
                raise ValueError(f"label value {v} outside 1..3")
            values.append(v)
    if len(values) > n_max:
        raise ValueError(f"{len(values)} labels exceed the token capacity {n_max}")
    E = np.zeros((1, n_max))
    mask = np.zeros(n_max, dtype=bool)
    for j, v in enumerate(values):
        E[0, j] = float(v)
        mask[j] = True
    return E, mask


def load_sentiment_csv(path):
    """Read (date, article_id, label) rows.

    Returns (labels_by_id, counts_by_date) where labels are 1/2/3.
    """
    labels_by_id: dict[str, int] = {}
    counts_by_date: dict[str, SentimentCounts] = {}
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        required = {"date", "article_id", "label"}
        if reader.fieldnames is None or not required.issubset(reader.fieldnames):
            raise ValueError("sentiment CSV needs columns date, article_id, label")
        for row in reader:
            label = row["label"].strip().lower()
            if label not in LABEL_VALUES:
                raise ValueError(f"unknown sentiment label {row['label']!r}")
            date = row["date"].strip()
            labels_by_id[row["article_id"].strip()] = LABEL_VALUES[label]
            counts = counts_by_date.setdefault(date, SentimentCounts(date=date))
            if label == "positive":
                counts.positive += 1
            elif label == "negative":
                counts.negative += 1
            else:
                counts.neutral += 1
    return labels_by_id, counts_by_date
