import math
from typing import Optional

import numpy as np

from src.LinearModel import STATE_NAMES
from src.utils import save_to_json


class HalfspaceSet:
    """Conjunction of halfspaces a_i . x >= b_i over the state; no rows means the whole state space."""

    def __init__(self, name: str, normals, offsets, labels: Optional[list[str]] = None) -> None:
        self.name: str = name
        self.normals: np.ndarray = np.asarray(normals, dtype=float).reshape(-1, 4)
        self.offsets: np.ndarray = np.asarray(offsets, dtype=float).reshape(-1)

        if self.normals.shape[0] != self.offsets.shape[0]:
            raise ValueError("Invalid halfspace set. Needs one offset per normal.")

        self.labels: list[str] = labels or [f"h{i}" for i in range(self.offsets.shape[0])]

    @property
    def size(self) -> int:
        return self.offsets.shape[0]

    def slacks(self, x) -> np.ndarray:
        """a_i . x - b_i for every halfspace (nonnegative inside); broadcasts over rows of x."""
        return np.asarray(x, dtype=float) @ self.normals.T - self.offsets

    def min_slack(self, x) -> float:
        if self.size == 0:
            return math.inf
        return float(np.min(self.slacks(x)))

    def contains(self, x, tol: float = 0.0) -> bool:
        return self.min_slack(x) >= -tol

    def describe(self) -> list[str]:
        rows = []
        for normal, offset, label in zip(self.normals, self.offsets, self.labels):
            terms = " + ".join(f"{value:g}*{name}" for value, name in zip(normal, STATE_NAMES) if value != 0.0)
            rows.append(f"{label}: {terms} >= {offset:g}")
        return rows


class TerminalSets:
    """
    Certified terminal pieces for one horizon N. ``behind`` is the merge-behind set, every other piece is a
    merge-in-front set. ``handover`` lists for each piece the pieces its shifted terminal state may enter.
    """

    def __init__(self, pieces: dict, handover: dict, N: int, buffers: dict, reports: list) -> None:
        if "behind" not in pieces or "front" not in pieces:
            raise ValueError("Invalid terminal sets. Need at least the 'behind' and 'front' pieces.")
        if set(handover) != set(pieces) or any(name not in pieces for names in handover.values() for name in names):
            raise ValueError("Invalid handover map. Must name existing pieces only, one entry per piece.")

        self.pieces: dict = dict(pieces)
        self.handover: dict = {key: list(names) for key, names in handover.items()}
        self.N: int = int(N)
        self.buffers: dict = dict(buffers)
        self.reports: list = list(reports)

    @property
    def names(self) -> list[str]:
        return list(self.pieces)

    @property
    def omega1(self) -> HalfspaceSet:
        return self.pieces["behind"]

    def branch(self, name: str) -> HalfspaceSet:
        if name not in self.pieces:
            raise ValueError(f"Invalid branch. Must be one of {self.names}.")
        return self.pieces[name]

    @staticmethod
    def side(name: Optional[str]) -> Optional[str]:
        """Merge direction of a piece: behind or front."""
        if name is None:
            return None
        return "behind" if name == "behind" else "front"


def _json_float(value):
    if value is None or math.isfinite(value):
        return value
    return "inf" if value > 0 else "-inf"


class CertificateReport:
    """Outcome of a certification check; failure is data, not an exception."""

    def __init__(self, name: str, certified: bool, worst_slack: float, counterexample=None,
                 details: Optional[dict] = None) -> None:
        self.name: str = name
        self.certified: bool = bool(certified)
        self.worst_slack: float = float(worst_slack)
        self.counterexample: Optional[list[float]] = None if counterexample is None else [float(v) for v in
                                                                                         counterexample]
        self.details: dict = details or {}

    def to_dict(self) -> dict:
        return {"set": self.name, "certified": self.certified, "worst_slack": _json_float(self.worst_slack),
                "counterexample": self.counterexample, **self.details}

    def save_report_to_json(self, filepath: str) -> None:
        save_to_json(self.to_dict(), filepath, f"Certificate report '{self.name}' saved to {filepath}.")

    def __repr__(self) -> str:
        return f"CertificateReport({self.name}, certified={self.certified}, worst_slack={self.worst_slack:.3e})"
