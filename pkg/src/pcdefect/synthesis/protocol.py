"""Difficulty protocol: per defect type and tier, the admissible ranges of

* alpha: geodesic anchor distance / bounding diagonal
* beta:  control radius / bounding diagonal
* gamma: peak displacement / bounding diagonal
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum


class DefectType(str, Enum):
    AREAL = "areal"
    STRIATE = "striate"
    SCRATCH = "scratch"
    SPHERE = "sphere"


class Difficulty(str, Enum):
    EASY = "easy"
    MEDIUM = "medium"
    HARD = "hard"


@dataclass(frozen=True)
class ProtocolRanges:
    defect_type: DefectType
    difficulty: Difficulty
    alpha: tuple
    beta: tuple
    gamma: tuple
    # alpha is only an upper bound (point-like defect): anchors coincide
    alpha_upper_only: bool = False

    def contains(self, alpha: float, beta: float, gamma: float) -> bool:
        a_ok = (0.0 <= alpha < self.alpha[1]) if self.alpha_upper_only else (self.alpha[0] <= alpha <= self.alpha[1])
        return a_ok and self.beta[0] <= beta <= self.beta[1] and self.gamma[0] <= gamma <= self.gamma[1]


_E, _M, _H = Difficulty.EASY, Difficulty.MEDIUM, Difficulty.HARD
_GAMMA_TIERED = {_E: (5e-3, 7e-3), _M: (3e-3, 5e-3), _H: (1e-3, 3e-3)}

_TABLE = {
    DefectType.AREAL: {t: ((0.05, 0.1), (0.04, 0.07), _GAMMA_TIERED[t]) for t in Difficulty},
    DefectType.STRIATE: {t: ((0.02, 0.1), (0.01, 0.03), _GAMMA_TIERED[t]) for t in Difficulty},
    DefectType.SCRATCH: {
        _E: ((0.3, 0.4), (3e-3, 4e-3), (1e-3, 5e-3)),
        _M: ((0.2, 0.3), (2e-3, 3e-3), (1e-3, 5e-3)),
        _H: ((0.1, 0.2), (1e-3, 2e-3), (1e-3, 5e-3)),
    },
    DefectType.SPHERE: {
        _E: ((0.0, 1e-3), (7e-3, 9e-3), (1e-3, 5e-3)),
        _M: ((0.0, 1e-3), (5e-3, 7e-3), (1e-3, 5e-3)),
        _H: ((0.0, 1e-3), (3e-3, 5e-3), (1e-3, 5e-3)),
    },
}


def protocol_ranges(defect_type, difficulty) -> ProtocolRanges:
    dt, df = DefectType(defect_type), Difficulty(difficulty)
    alpha, beta, gamma = _TABLE[dt][df]
    return ProtocolRanges(dt, df, alpha, beta, gamma, alpha_upper_only=dt is DefectType.SPHERE)
