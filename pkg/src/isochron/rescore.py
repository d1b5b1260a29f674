"""N-best rescoring with a length-synchrony sub-score.

Combined score: ``(1 - alpha) * log P(t|s) + alpha * sync(t, s)`` where ``sync`` is
either the symmetric difference score ``1 / (1 + |len t - len s|)`` or the
one-directional ratio score ``1 / (1 + len t / len s)`` (lengths in characters).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, replace

import numpy as np

from .decode import Hypothesis, NBestList


class RescoreError(ValueError):
    pass


class Scorer(str, enum.Enum):
    DIFF = "diff"
    RATIO = "ratio"


class Direction(str, enum.Enum):
    SHORTEN = "shorten"
    LENGTHEN = "lengthen"


@dataclass(frozen=True)
class RescoreParams:
    alpha: float = 0.5
    scorer: Scorer = Scorer.RATIO
    direction: Direction = Direction.SHORTEN
    normalize_logprob: bool = False

    def __post_init__(self):
        object.__setattr__(self, "scorer", Scorer(self.scorer))
        object.__setattr__(self, "direction", Direction(self.direction))
        if not 0.0 <= self.alpha <= 1.0:
            raise RescoreError(f"alpha must lie in [0, 1], got {self.alpha}")

    def to_json(self) -> dict:
        return {"alpha": self.alpha, "scorer": self.scorer.value,
                "direction": self.direction.value, "normalize_logprob": self.normalize_logprob}


def sync_score_diff(len_t: int, len_s: int) -> float:
    if len_t < 0 or len_s < 0:
        raise RescoreError("lengths must be non-negative")
    return 1.0 / (1.0 + abs(len_t - len_s))


def sync_score_ratio(len_t: int, len_s: int, direction: Direction | str = Direction.SHORTEN) -> float:
    """Decreasing in the length ratio (shorten) or in its inverse (lengthen)."""
    direction = Direction(direction)
    if direction is Direction.SHORTEN:
        if len_s <= 0:
            raise RescoreError("source length must be positive")
        return 1.0 / (1.0 + len_t / len_s)
    if len_t <= 0:
        raise RescoreError("target length must be positive when lengthening")
    return 1.0 / (1.0 + len_s / len_t)


def sync_score(len_t: int, len_s: int, params: RescoreParams) -> float:
    if params.scorer is Scorer.DIFF:
        return sync_score_diff(len_t, len_s)
    return sync_score_ratio(len_t, len_s, params.direction)


def combined_score(h: Hypothesis, source_chars: int, params: RescoreParams) -> float:
    logp = h.sum_logprob / h.n_tokens if params.normalize_logprob else h.sum_logprob
    return (1.0 - params.alpha) * logp + params.alpha * sync_score(h.char_len, source_chars, params)


def rescore(nbest: NBestList, params: RescoreParams) -> NBestList:
    """Re-rank by the combined score; equal scores keep their incoming order."""
    if not nbest.hypotheses:
        raise RescoreError(f"N-best list {nbest.id} is empty")
    if nbest.source_chars <= 0:
        raise RescoreError(f"N-best list {nbest.id} has an empty source")
    scored = [replace(h, rescored=combined_score(h, nbest.source_chars, params))
              for h in nbest.hypotheses]
    order = sorted(range(len(scored)), key=lambda i: -scored[i].rescored)
    return NBestList(nbest.source, nbest.source_chars, [scored[i] for i in order], nbest.id)


def alpha_grid(start: float, stop: float, step: float) -> list[float]:
    """Inclusive grid, rounded to suppress float drift (``0:1:0.05`` has 21 points)."""
    if step <= 0 or stop < start:
        raise RescoreError(f"bad sweep {start}:{stop}:{step}")
    n = int(np.floor((stop - start) / step + 1e-9)) + 1
    return [round(start + i * step, 10) for i in range(n)]


def parse_sweep(text: str) -> list[float]:
    try:
        start, stop, step = (float(x) for x in text.split(":"))
    except ValueError:
        raise RescoreError(f"sweep must look like start:stop:step, got {text!r}") from None
    return alpha_grid(start, stop, step)
