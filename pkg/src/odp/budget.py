"""Hard-coded privacy budget depleted by basic sequential composition."""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ParameterError
from .noise import PrivacyParams

# absorbs float drift such as 0.1 + 0.2 so that spending exactly the total is accepted
_SLACK = 1e-12


class BudgetExhausted(Exception):
    """Raised by :meth:`PrivacyBudget.spend` when a charge is refused."""


@dataclass
class LedgerEntry:
    label: str
    epsilon: float
    delta: float


@dataclass
class PrivacyBudget:
    epsilon_total: float
    delta_total: float = 0.0
    epsilon_spent: float = 0.0
    delta_spent: float = 0.0
    entries: list[LedgerEntry] = field(default_factory=list)

    def __post_init__(self):
        if self.epsilon_total < 0 or not 0 <= self.delta_total < 1:
            raise ParameterError("budget totals must satisfy epsilon >= 0 and 0 <= delta < 1")
        self._lock = threading.Lock()

    @property
    def epsilon_remaining(self) -> float:
        return max(0.0, self.epsilon_total - self.epsilon_spent)

    @property
    def delta_remaining(self) -> float:
        return max(0.0, self.delta_total - self.delta_spent)

    def charge(self, params, label: str = "") -> bool:
        """Spend ``params`` if both ledgers stay within their totals.

        ``params`` is a :class:`PrivacyParams` or an ``(epsilon, delta)`` pair;
        a pair may carry epsilon 0. Returns False, leaving the ledger
        untouched, when the charge would overspend.
        """
        if isinstance(params, PrivacyParams):
            eps, delta = params.epsilon, params.delta
        else:
            eps, delta = (float(x) for x in params)
            if eps < 0 or not 0 <= delta < 1:
                raise ParameterError(f"invalid charge ({eps}, {delta})")
        with self._lock:
            if self.epsilon_spent + eps > self.epsilon_total + _SLACK:
                return False
            if self.delta_spent + delta > self.delta_total + _SLACK:
                return False
            self.epsilon_spent += eps
            self.delta_spent += delta
            self.entries.append(LedgerEntry(label, eps, delta))
            return True

    def spend(self, params, label: str = "") -> None:
        if not self.charge(params, label):
            raise BudgetExhausted(
                f"privacy budget exhausted: remaining eps={self.epsilon_remaining:g}, "
                f"delta={self.delta_remaining:g}"
            )

    def report(self) -> dict:
        return {
            "epsilon_total": self.epsilon_total,
            "delta_total": self.delta_total,
            "epsilon_spent": self.epsilon_spent,
            "delta_spent": self.delta_spent,
            "epsilon_remaining": self.epsilon_remaining,
            "delta_remaining": self.delta_remaining,
            "entries": [e.__dict__ for e in self.entries],
        }

    @classmethod
    def from_report(cls, report: dict) -> PrivacyBudget:
        b = cls(report["epsilon_total"], report["delta_total"])
        for e in report.get("entries", []):
            if not b.charge((e["epsilon"], e["delta"]), e.get("label", "")):
                raise ParameterError("ledger file overspends its own totals")
        return b

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.report(), indent=2) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> PrivacyBudget:
        return cls.from_report(json.loads(Path(path).read_text()))


def charge(b: PrivacyBudget, params, label: str = "") -> bool:
    return b.charge(params, label)
