"""Zero-concentrated differential privacy primitives and budget accounting.

All budgets are expressed in zCDP units (rho). Conversions to and from
(epsilon, delta)-DP happen at the edges, when reporting or when reading
user input.
"""
import dataclasses
import logging
import math
import typing

import numpy as np
from scipy import optimize

from gsdsynth.common import BudgetError, LedgerRecord, ParameterError

log = logging.getLogger(__name__)

# Relative slack granted when the ledger is spent to its total, so that
# a budget split in k equal parts can be spent k times.
BUDGET_TOLERANCE = 1e-12
DEFAULT_DELTA = 1e-6


@dataclasses.dataclass(frozen=True, eq=False)
class NoiseDraw:
    values: np.ndarray
    sigma: float
    rho_spent: float


@dataclasses.dataclass(frozen=True)
class LedgerEntry:
    label: str
    rho: float


@dataclasses.dataclass
class PrivacyLedger:
    """Running record of the zCDP budget spent by a mechanism."""

    total_rho: float
    delta: float = DEFAULT_DELTA
    entries: typing.List[LedgerEntry] = dataclasses.field(default_factory=list)

    def __post_init__(self):
        if not math.isfinite(self.total_rho) or self.total_rho <= 0:
            raise ParameterError(f"Total budget must be a positive number, got {self.total_rho}")
        _check_delta(self.delta)

    @property
    def spent_rho(self) -> float:
        return math.fsum(entry.rho for entry in self.entries)

    @property
    def remaining_rho(self) -> float:
        return max(self.total_rho - self.spent_rho, 0.0)

    def spend(self, label: str, rho: float) -> LedgerEntry:
        if not math.isfinite(rho) or rho <= 0:
            raise ParameterError(f"Spend for {label!r} must be positive, got {rho}")
        after = math.fsum([self.spent_rho, rho])
        if after > self.total_rho * (1 + BUDGET_TOLERANCE):
            raise BudgetError(
                f"Spending {rho} for {label!r} exceeds the budget: "
                f"{self.spent_rho} of {self.total_rho} already spent"
            )
        entry = LedgerEntry(label, rho)
        self.entries.append(entry)
        log.debug("ledger: %s rho=%r cumulative=%r", label, rho, after)
        return entry

    def epsilon(self) -> float:
        """The (epsilon, delta)-DP guarantee implied by what was spent so far."""
        return zcdp_to_dp(self.spent_rho, self.delta)

    def records(self) -> typing.List[LedgerRecord]:
        records = []
        cumulative = []
        for sequence, entry in enumerate(self.entries, start=1):
            cumulative.append(entry.rho)
            records.append(
                LedgerRecord(
                    sequence=sequence,
                    label=entry.label,
                    rho=entry.rho,
                    cumulative_rho=math.fsum(cumulative),
                    total_rho=self.total_rho,
                )
            )
        return records

    def to_document(self) -> dict:
        return {
            "total_rho": self.total_rho,
            "spent_rho": self.spent_rho,
            "remaining_rho": self.remaining_rho,
            "delta": self.delta,
            "epsilon": self.epsilon(),
            "entries": [{"label": e.label, "rho": e.rho} for e in self.entries],
        }


def _check_delta(delta: float):
    if not 0 < delta < 1:
        raise ParameterError(f"delta must be in (0, 1), got {delta}")


def gaussian_sigma(l2_sensitivity: float, rho: float) -> float:
    return l2_sensitivity * math.sqrt(1 / (2 * rho))


def gaussian_mechanism(
    answers: np.ndarray,
    l2_sensitivity: float,
    rho: float,
    rng: np.random.Generator,
    ledger: typing.Optional[PrivacyLedger] = None,
    label: str = "gaussian",
) -> NoiseDraw:
    """Release answers plus isotropic Gaussian noise, satisfying rho-zCDP.

    When a ledger is given the spend is recorded under label before any
    noise is drawn, otherwise recording it is up to the caller.
    """
    if not math.isfinite(rho) or rho <= 0:
        raise ParameterError(f"rho must be positive, got {rho}")
    if not math.isfinite(l2_sensitivity) or l2_sensitivity <= 0:
        raise ParameterError(f"L2 sensitivity must be positive, got {l2_sensitivity}")
    answers = np.asarray(answers, dtype=np.float64)
    if not np.all(np.isfinite(answers)):
        raise ParameterError("answers must be finite")
    sigma = gaussian_sigma(l2_sensitivity, rho)
    if ledger is not None:
        ledger.spend(label, rho)
    values = answers + rng.normal(0.0, sigma, size=answers.shape)
    return NoiseDraw(values=values, sigma=sigma, rho_spent=rho)


def gumbel_scale(rho: float, n_rows: int) -> float:
    return 1 / (math.sqrt(2 * rho) * n_rows)


def report_noisy_max(
    errors: np.ndarray, rho: float, n_rows: int, rng: np.random.Generator
) -> int:
    """Index of the largest error after adding Gumbel noise.

    This is the exponential mechanism with scores in [0, 1] whose
    sensitivity is 1/n_rows.
    """
    errors = np.asarray(errors, dtype=np.float64)
    if errors.ndim != 1 or errors.size == 0:
        raise ParameterError("errors must be a non-empty vector")
    if not np.all(np.isfinite(errors)):
        raise ParameterError("errors must be finite")
    if not math.isfinite(rho) or rho <= 0:
        raise ParameterError(f"rho must be positive, got {rho}")
    if n_rows < 1:
        raise ParameterError(f"n_rows must be at least 1, got {n_rows}")
    u = np.maximum(rng.random(errors.size), np.finfo(np.float64).tiny)
    noise = -gumbel_scale(rho, n_rows) * np.log(-np.log(u))
    return int(np.argmax(errors + noise))


def zcdp_to_dp(rho: float, delta: float) -> float:
    if not math.isfinite(rho) or rho < 0:
        raise ParameterError(f"rho must be non-negative, got {rho}")
    _check_delta(delta)
    return rho + 2 * math.sqrt(rho * math.log(1 / delta))


def dp_to_zcdp(epsilon: float, delta: float) -> float:
    """Largest rho whose (epsilon, delta) conversion does not exceed epsilon."""
    if not math.isfinite(epsilon) or epsilon <= 0:
        raise ParameterError(f"epsilon must be positive, got {epsilon}")
    _check_delta(delta)
    # zcdp_to_dp(epsilon) >= epsilon, so the root lies in [0, epsilon]
    return optimize.bisect(
        lambda rho: zcdp_to_dp(rho, delta) - epsilon, 0.0, epsilon, xtol=1e-12
    )


def split_budget(rho: float, epochs: int, samples: int) -> float:
    """Per-call budget when each of epochs * samples rounds selects and measures once."""
    if not math.isfinite(rho) or rho <= 0:
        raise ParameterError(f"rho must be positive, got {rho}")
    if epochs < 1 or samples < 1:
        raise ParameterError(f"epochs and samples must be positive, got {epochs} and {samples}")
    return rho / (2 * epochs * samples)
