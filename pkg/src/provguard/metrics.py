"""Detection metrics over (predicted class, ground truth) pairs.

APT is the positive class. Zero-denominator precision/recall are reported as
0.0 with an explicit degenerate flag.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict
from typing import List, Sequence, Tuple


class EmptyInput(Exception):
    pass


@dataclass
class MetricsReport:
    tp: int
    fp: int
    fn: int
    tn: int
    accuracy: float
    precision: float
    recall: float
    f_score: float
    fpr: float
    false_positive_count: int
    degenerate: List[str] = field(default_factory=list)

    def to_json(self) -> dict:
        return asdict(self)


def eval_metrics(pairs: Sequence[Tuple[str, str]]) -> MetricsReport:
    """Compute the confusion matrix and rates from (predicted, truth) pairs,
    with labels "apt"/"benign"."""
    if not pairs:
        raise EmptyInput("no predictions to evaluate")
    tp = fp = fn = tn = 0
    for predicted, truth in pairs:
        pos = predicted == "apt"
        actual = truth == "apt"
        if pos and actual:
            tp += 1
        elif pos and not actual:
            fp += 1
        elif not pos and actual:
            fn += 1
        else:
            tn += 1

    total = tp + fp + fn + tn
    degenerate = []
    if tp + fp > 0:
        precision = tp / (tp + fp)
    else:
        precision = 0.0
        degenerate.append("precision")
    if tp + fn > 0:
        recall = tp / (tp + fn)
    else:
        recall = 0.0
        degenerate.append("recall")
    if precision + recall > 0:
        f_score = 2 * precision * recall / (precision + recall)
    else:
        f_score = 0.0
        degenerate.append("f_score")
    if fp + tn > 0:
        fpr = fp / (fp + tn)
    else:
        fpr = 0.0
        degenerate.append("fpr")

    return MetricsReport(
        tp=tp,
        fp=fp,
        fn=fn,
        tn=tn,
        accuracy=(tp + tn) / total,
        precision=precision,
        recall=recall,
        f_score=f_score,
        fpr=fpr,
        false_positive_count=fp,
        degenerate=degenerate,
    )
