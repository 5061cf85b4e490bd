"""Private mechanisms built from measurements and genetic projection.

Both mechanisms touch the sensitive dataset only to compute true answers
before any projection starts. Projection sees noisy answers, the schema
and the configuration.
"""
import dataclasses
import enum
import logging
import math
import pathlib
import typing

import numpy as np

from gsdsynth import common, dp_core, gsd
from gsdsynth.common import ParameterError
from gsdsynth.dataset import Dataset, DomainSchema, random_dataset
from gsdsynth.queries import QueryEngine, Workload, WorkloadKind

log = logging.getLogger(__name__)

_NOISE_STREAM = 0x6E6F697365
_INIT_STREAM = 0x696E6974


class SelectUnit(enum.Enum):
    WORKLOAD = "workload"
    QUERY = "query"


class Reselection(enum.Enum):
    CONCATENATE = "concatenate"
    REPLACE = "replace"


@dataclasses.dataclass(frozen=True)
class AdaptiveOptions:
    select_unit: str = SelectUnit.WORKLOAD.value
    on_reselect: str = Reselection.CONCATENATE.value
    warm_start: bool = True

    def __post_init__(self):
        try:
            SelectUnit(self.select_unit)
            Reselection(self.on_reselect)
        except ValueError as err:
            raise ParameterError(str(err)) from err


@dataclasses.dataclass(frozen=True, eq=False)
class Measurement:
    workload_id: int
    query_indices: typing.Tuple[int, ...]
    noisy_answers: np.ndarray
    rho_spent: float
    epoch: int
    sample: int
    sigma: float
    workload: Workload


@dataclasses.dataclass(frozen=True)
class EpochRecord:
    epoch: int
    selected: typing.Tuple[str, ...]
    loss: float
    generations: int
    stop_reason: str


@dataclasses.dataclass(eq=False)
class RunReport:
    mode: str
    synthetic: Dataset
    ledger: dp_core.PrivacyLedger
    measurements: typing.List[Measurement]
    epochs: typing.List[EpochRecord]
    config: gsd.GsdConfig

    def to_document(
        self, schema: DomainSchema, workload_manifest_digest: typing.Optional[str] = None
    ) -> dict:
        return {
            "mode": self.mode,
            "seed": self.config.seed,
            "schema_digest": schema.digest(),
            "workload_manifest_digest": workload_manifest_digest,
            "config": _config_document(self.config),
            "ledger": self.ledger.to_document(),
            "epochs": [dataclasses.asdict(e) for e in self.epochs],
        }


def _config_document(config: gsd.GsdConfig) -> dict:
    # manifests are identical for any worker count
    document = dataclasses.asdict(config)
    del document["workers"]
    return document


def write_run_manifest(
    report: RunReport,
    schema: DomainSchema,
    path: pathlib.Path,
    workload_manifest_digest: typing.Optional[str] = None,
    extra: typing.Optional[dict] = None,
) -> str:
    document = report.to_document(schema, workload_manifest_digest)
    if extra:
        document.update(extra)
    text = common.canonical_json(document)
    path.write_text(text, encoding="utf-8")
    return common.digest_text(text)


def _noise_rng(config: gsd.GsdConfig) -> np.random.Generator:
    return np.random.default_rng([config.seed & 0xFFFFFFFFFFFFFFFF, _NOISE_STREAM])


def _tagged(trace: typing.Optional[gsd.TraceCallback], epoch: int) -> typing.Optional[gsd.TraceCallback]:
    if trace is None:
        return None
    return lambda record: trace({"epoch": epoch, **record})


def _check_inputs(W: typing.Sequence[Workload], rho: float):
    if not math.isfinite(rho) or rho <= 0:
        raise ParameterError(f"rho must be positive, got {rho}")
    if not W or not any(len(w) for w in W):
        raise ParameterError("At least one query is required")


def run_one_shot(
    D: Dataset,
    W: typing.Sequence[Workload],
    rho: float,
    gsd_config: gsd.GsdConfig,
    delta: float = dp_core.DEFAULT_DELTA,
    trace: typing.Optional[gsd.TraceCallback] = None,
) -> RunReport:
    _check_inputs(W, rho)
    ledger = dp_core.PrivacyLedger(rho, delta)
    with QueryEngine(D.schema, W, gsd_config.workers) as engine:
        true_answers = engine.answers(D)
    sensitivity = math.sqrt(math.fsum(w.l2_sensitivity ** 2 for w in W)) / D.n_rows
    draw = dp_core.gaussian_mechanism(
        true_answers, sensitivity, rho, _noise_rng(gsd_config), ledger, "measure one-shot"
    )
    targets = np.clip(draw.values, 0.0, 1.0)
    measurements = []
    for i, (w, part) in enumerate(zip(W, np.split(targets, np.cumsum([len(w) for w in W])[:-1]))):
        measurements.append(
            Measurement(i, tuple(range(len(w))), part, rho, 1, 1, draw.sigma, w)
        )
    result = gsd.evolve(gsd_config, D.schema, W, targets, trace=_tagged(trace, 1))
    epochs = [
        EpochRecord(1, tuple(w.name for w in W), result.loss, result.generations, result.stop_reason.value)
    ]
    log.info("one-shot projection loss %.6g, rho spent %r", result.loss, ledger.spent_rho)
    return RunReport("oneshot", result.dataset, ledger, measurements, epochs, gsd_config)


def one_shot(
    D: Dataset, W: typing.Sequence[Workload], rho: float, gsd_config: gsd.GsdConfig
) -> typing.Tuple[Dataset, dp_core.PrivacyLedger]:
    report = run_one_shot(D, W, rho, gsd_config)
    return report.synthetic, report.ledger


@dataclasses.dataclass(frozen=True)
class _Candidate:
    workload_id: int
    query_indices: typing.Tuple[int, ...]
    span: slice
    workload: Workload


def _candidates(W: typing.Sequence[Workload], engine: QueryEngine, unit: SelectUnit) -> typing.List[_Candidate]:
    candidates = []
    for i, (w, span) in enumerate(zip(W, engine.slices())):
        if not len(w):
            continue
        if unit is SelectUnit.WORKLOAD:
            candidates.append(_Candidate(i, tuple(range(len(w))), span, w))
            continue
        for j, q in enumerate(w.queries):
            single = Workload(f"{w.name}[{j}]", (q,), 1.0, WorkloadKind.CUSTOM)
            candidates.append(_Candidate(i, (j,), slice(span.start + j, span.start + j + 1), single))
    return candidates


def run_adaptive(
    D: Dataset,
    W: typing.Sequence[Workload],
    rho: float,
    epochs_T: int,
    samples_S: int,
    gsd_config: gsd.GsdConfig,
    options: AdaptiveOptions = AdaptiveOptions(),
    delta: float = dp_core.DEFAULT_DELTA,
    trace: typing.Optional[gsd.TraceCallback] = None,
) -> RunReport:
    """Select, measure and project for epochs_T rounds of samples_S selections each."""
    _check_inputs(W, rho)
    rho_call = dp_core.split_budget(rho, epochs_T, samples_S)
    ledger = dp_core.PrivacyLedger(rho, delta)
    rng = _noise_rng(gsd_config)
    schema = D.schema
    with QueryEngine(schema, W, gsd_config.workers) as engine:
        true_answers = engine.answers(D)
        candidates = _candidates(W, engine, SelectUnit(options.select_unit))
        n = D.n_rows
        synthetic = random_dataset(
            schema,
            gsd_config.synthetic_rows,
            np.random.default_rng([gsd_config.seed & 0xFFFFFFFFFFFFFFFF, _INIT_STREAM]),
        )
        measurements: typing.List[Measurement] = []
        epochs = []
        for t in range(1, epochs_T + 1):
            synthetic_answers = engine.answers(synthetic)
            scores = np.array(
                [np.max(np.abs(true_answers[c.span] - synthetic_answers[c.span])) for c in candidates]
            )
            selected = []
            for s in range(1, samples_S + 1):
                ledger.spend(f"select t={t}/s={s}", rho_call)
                choice = dp_core.report_noisy_max(scores, rho_call, n, rng)
                candidate = candidates[choice]
                draw = dp_core.gaussian_mechanism(
                    true_answers[candidate.span],
                    candidate.workload.l2_sensitivity / n,
                    rho_call,
                    rng,
                    ledger,
                    f"measure t={t}/s={s}",
                )
                if options.on_reselect == Reselection.REPLACE.value:
                    measurements = [
                        m for m in measurements
                        if (m.workload_id, m.query_indices) != (candidate.workload_id, candidate.query_indices)
                    ]
                measurements.append(
                    Measurement(
                        candidate.workload_id,
                        candidate.query_indices,
                        np.clip(draw.values, 0.0, 1.0),
                        rho_call,
                        t,
                        s,
                        draw.sigma,
                        candidate.workload,
                    )
                )
                selected.append(candidate.workload.name)
            result = project(
                schema,
                measurements,
                dataclasses.replace(gsd_config, seed=gsd_config.seed + t),
                init=synthetic if options.warm_start else None,
                trace=_tagged(trace, t),
            )
            synthetic = result.dataset
            epochs.append(
                EpochRecord(t, tuple(selected), result.loss, result.generations, result.stop_reason.value)
            )
            log.info("epoch %d: selected %s, projection loss %.6g", t, ", ".join(selected), result.loss)
    return RunReport("adaptive", synthetic, ledger, measurements, epochs, gsd_config)


def project(
    schema: DomainSchema,
    measurements: typing.Sequence[Measurement],
    gsd_config: gsd.GsdConfig,
    init: typing.Optional[Dataset] = None,
    trace: typing.Optional[gsd.TraceCallback] = None,
) -> gsd.GsdResult:
    """Fit a synthetic dataset to the noisy answers of all measurements so far."""
    workloads = [m.workload for m in measurements]
    targets = np.concatenate([m.noisy_answers for m in measurements])
    return gsd.evolve(gsd_config, schema, workloads, targets, init=init, trace=trace)


def adaptive(
    D: Dataset,
    W: typing.Sequence[Workload],
    rho: float,
    epochs_T: int,
    samples_S: int,
    gsd_config: gsd.GsdConfig,
) -> typing.Tuple[Dataset, dp_core.PrivacyLedger]:
    report = run_adaptive(D, W, rho, epochs_T, samples_S, gsd_config)
    return report.synthetic, report.ledger
