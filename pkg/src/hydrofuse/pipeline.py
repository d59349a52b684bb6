"""Batch orchestration: load inputs, run estimators per scenario, score, write reports.

Each scenario is evaluated independently (optionally in a process pool) and
the main process writes every output after sorting by scenario id, so the
files are a pure function of the inputs and do not depend on parallelism.
"""

from __future__ import annotations

import csv
import enum
import io
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .errors import HydrofuseError, ValidationError
from .filters import EstimatorConfig, dual_ukf_run, ukf_awgsi_run
from .fileio import (FORMAT_VERSION, ScenarioBatch, atomic_write_text, dump_json, format_float,
                     ingest_measurements, load_batch, load_document, load_layout, load_network, save_batch, save_layout,
                     save_network, write_measurements)
from .hydraulics import (HydraulicState, LeakScenario, Measurements, NoiseSpec, estimate_incidence,
                         generate_scenario, hazen_williams_flow)
from .interpolation import awgsi_weights, default_orientation, gsi_weights, interpolate_heads
from .localization import (DEFAULT_THRESHOLD, LocalizationReport, candidate_set, localize, node_likelihood,
                           pipe_metric, top_node_hops)
from .network import NetworkModel, SensorLayout, build_structural
from .synthetic import desk_layout, leak_batch, random_network

OUTPUT_DIR_ENV = "HYDROFUSE_OUTPUT_DIR"
RESULTS_FORMAT = "hydrofuse.results"


class Estimator(str, enum.Enum):
    GSI = "GSI"
    AWGSI = "AWGSI"
    UKF_AWGSI = "UKF_AWGSI"
    DUAL_UKF_AWGSI = "DUAL_UKF_AWGSI"


ALL_ESTIMATORS = tuple(Estimator)


def parse_estimators(values) -> tuple[Estimator, ...]:
    """Normalise names and return them in canonical column order."""
    try:
        chosen = {v if isinstance(v, Estimator) else Estimator(str(v).upper()) for v in values}
    except ValueError as exc:
        raise ValidationError(f"unknown estimator: {exc}; choose from {[e.value for e in Estimator]}") from None
    if not chosen:
        raise ValidationError("at least one estimator is required")
    return tuple(e for e in ALL_ESTIMATORS if e in chosen)


@dataclass(frozen=True)
class RunConfig:
    network_path: str
    layout_path: str
    output_dir: str
    scenario_batch_path: str | None = None
    measurement_ingest_path: str | None = None
    estimators: tuple[Estimator, ...] = ALL_ESTIMATORS
    estimator_config: EstimatorConfig = field(default_factory=EstimatorConfig)
    rng_seed: int = 0
    parallelism: int = 1
    localize: bool = True
    threshold: float = DEFAULT_THRESHOLD
    reference_scenario_id: str | None = None

    def __post_init__(self):
        if (self.scenario_batch_path is None) == (self.measurement_ingest_path is None):
            raise ValidationError("exactly one of scenario_batch_path / measurement_ingest_path is required")
        if self.parallelism < 1:
            raise ValidationError("parallelism must be at least 1")
        if not 0.0 <= self.threshold <= 1.0:
            raise ValidationError("threshold must lie in [0, 1]")
        object.__setattr__(self, "estimators", parse_estimators(self.estimators))

    @classmethod
    def from_mapping(cls, data: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ValidationError(f"unknown run-config field(s): {', '.join(unknown)}")
        data = dict(data)
        if isinstance(data.get("estimator_config"), dict):
            est_known = {f.name for f in fields(EstimatorConfig)}
            bad = sorted(set(data["estimator_config"]) - est_known)
            if bad:
                raise ValidationError(f"unknown estimator_config field(s): {', '.join(bad)}")
            data["estimator_config"] = EstimatorConfig(**data["estimator_config"])
        return cls(**data)

    def to_mapping(self) -> dict:
        out = {f.name: getattr(self, f.name) for f in fields(self)}
        out["estimators"] = [e.value for e in self.estimators]
        out["estimator_config"] = asdict(self.estimator_config)
        return out


# -- estimation ------------------------------------------------------------------------------

@dataclass
class EstimateSet:
    """Head/flow estimates per estimator plus the failures that prevented others."""

    heads: dict[Estimator, np.ndarray] = field(default_factory=dict)
    flows: dict[Estimator, np.ndarray] = field(default_factory=dict)
    errors: dict[Estimator, str] = field(default_factory=dict)
    diagnostics: dict[Estimator, dict] = field(default_factory=dict)


def _flows_from_heads(heads, network, structural):
    return hazen_williams_flow(heads, estimate_incidence(heads, network), structural.resistance)


def run_estimators(network: NetworkModel, structural, layout: SensorLayout, meas: Measurements,
                   estimators, config: EstimatorConfig) -> EstimateSet:
    """Run the requested estimators; later ones start from the earlier reconstructions.

    A failure is recorded against the estimator that raised and every
    estimator that depends on it; the rest of the set still runs.
    """
    wanted = set(estimators)
    out = EstimateSet()
    orient = default_orientation(network)
    try:
        h_gsi = interpolate_heads(gsi_weights(structural), layout, meas.heads, zeta=config.zeta,
                                  orientation=orient).heads
    except HydrofuseError as exc:
        for e in wanted:
            out.errors[e] = f"GSI failed: {exc}"
        return out
    if Estimator.GSI in wanted:
        out.heads[Estimator.GSI] = h_gsi
        out.flows[Estimator.GSI] = _flows_from_heads(h_gsi, network, structural)
    if not wanted - {Estimator.GSI}:
        return out
    try:
        weights = awgsi_weights(structural, h_gsi)
        h_aw = interpolate_heads(weights, layout, meas.heads, zeta=config.zeta, orientation=orient).heads
    except HydrofuseError as exc:
        for e in wanted - {Estimator.GSI}:
            out.errors[e] = f"AWGSI failed: {exc}"
        return out
    if Estimator.AWGSI in wanted:
        out.heads[Estimator.AWGSI] = h_aw
        out.flows[Estimator.AWGSI] = _flows_from_heads(h_aw, network, structural)
    if Estimator.UKF_AWGSI in wanted:
        try:
            h, diag = ukf_awgsi_run(network, structural, layout, weights, config, meas, h_aw)
            out.heads[Estimator.UKF_AWGSI] = h
            out.flows[Estimator.UKF_AWGSI] = _flows_from_heads(h, network, structural)
            out.diagnostics[Estimator.UKF_AWGSI] = {"iterations": diag.iterations, "converged": diag.converged}
        except HydrofuseError as exc:
            out.errors[Estimator.UKF_AWGSI] = f"{type(exc).__name__}: {exc}"
    if Estimator.DUAL_UKF_AWGSI in wanted:
        try:
            h, q, diag = dual_ukf_run(network, structural, layout, weights, config, meas, h_aw)
            out.heads[Estimator.DUAL_UKF_AWGSI] = h
            out.flows[Estimator.DUAL_UKF_AWGSI] = np.abs(q)
            out.diagnostics[Estimator.DUAL_UKF_AWGSI] = {"iterations": diag.iterations,
                                                         "converged": diag.converged}
        except HydrofuseError as exc:
            out.errors[Estimator.DUAL_UKF_AWGSI] = f"{type(exc).__name__}: {exc}"
    return out


def rmse(x, x_hat) -> float:
    x = np.asarray(x, dtype=float)
    return float(np.sqrt(np.mean((x - np.asarray(x_hat, dtype=float)) ** 2)))


@dataclass
class ScenarioOutcome:
    scenario_id: str
    leak_pipe: int | None
    head_rmse_cm: dict[str, float] = field(default_factory=dict)
    flow_rmse_lps: dict[str, float] = field(default_factory=dict)
    reports: dict[str, LocalizationReport] = field(default_factory=dict)
    candidates_only: dict[str, tuple[int, ...]] = field(default_factory=dict)
    top_hops: dict[str, int] = field(default_factory=dict)
    errors: dict[str, str] = field(default_factory=dict)
    diagnostics: dict[str, dict] = field(default_factory=dict)
    heads: dict[str, np.ndarray] = field(default_factory=dict)
    flows: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def failed(self) -> bool:
        return bool(self.errors)


@dataclass(frozen=True)
class ScenarioTask:
    network: NetworkModel
    layout: SensorLayout
    estimators: tuple[Estimator, ...]
    config: EstimatorConfig
    do_localize: bool
    threshold: float
    scenario: LeakScenario | None = None
    noise: NoiseSpec | None = None
    measurements: Measurements | None = None
    reference: Measurements | None = None
    scenario_id: str = ""


def evaluate_scenario(task: ScenarioTask) -> ScenarioOutcome:
    """Everything for one scenario; pure function of the task."""
    net, lay = task.network, task.layout
    st = build_structural(net)
    sid = task.scenario.scenario_id if task.scenario is not None else task.scenario_id
    outcome = ScenarioOutcome(sid, task.scenario.leak_pipe if task.scenario is not None else None)
    truth: HydraulicState | None = None
    try:
        if task.scenario is not None:
            truth, meas = generate_scenario(net, lay, task.scenario, task.noise, structural=st)
        else:
            meas = task.measurements
    except HydrofuseError as exc:
        for e in task.estimators:
            outcome.errors[e.value] = f"scenario generation failed: {exc}"
        return outcome
    est = run_estimators(net, st, lay, meas, task.estimators, task.config)
    for e, msg in est.errors.items():
        outcome.errors[e.value] = msg
    for e, diag in est.diagnostics.items():
        outcome.diagnostics[e.value] = diag
    for e in task.estimators:
        if e not in est.heads:
            continue
        outcome.heads[e.value] = est.heads[e]
        outcome.flows[e.value] = est.flows[e]
        if truth is not None:
            outcome.head_rmse_cm[e.value] = 100.0 * rmse(truth.heads, est.heads[e])
            outcome.flow_rmse_lps[e.value] = rmse(truth.flows, est.flows[e])

    if not task.do_localize:
        return outcome
    reference_meas = task.reference
    if task.scenario is not None:
        try:
            _, reference_meas = generate_scenario(net, lay, replace(task.scenario, leak_rate=0.0), task.noise,
                                                  structural=st)
        except HydrofuseError as exc:
            for e in task.estimators:
                outcome.errors.setdefault(e.value, f"reference scenario failed: {exc}")
            return outcome
    if reference_meas is None:
        return outcome
    ref = run_estimators(net, st, lay, reference_meas, [e for e in task.estimators if e in est.heads], task.config)
    for e in task.estimators:
        if e not in est.heads:
            continue
        if e not in ref.heads:
            outcome.errors[e.value] = f"reference run failed: {ref.errors.get(e, 'unknown')}"
            continue
        if outcome.leak_pipe is None:
            like = node_likelihood(ref.heads[e], est.heads[e], reference_id=f"{sid}:ref", leak_id=sid)
            outcome.candidates_only[e.value] = candidate_set(pipe_metric(like, net), task.threshold)
            continue
        like, report = localize(net, ref.heads[e], est.heads[e], outcome.leak_pipe, threshold=task.threshold,
                                scenario_id=sid)
        outcome.reports[e.value] = report
        outcome.top_hops[e.value] = top_node_hops(net, like, outcome.leak_pipe)
    return outcome


# -- summaries -------------------------------------------------------------------------------

@dataclass
class RmseSummary:
    """Per-scenario RMSE (heads in cm, flows in L/s) and their batch mean/std per estimator."""

    estimators: tuple[str, ...]
    scenario_ids: tuple[str, ...]
    head_cm: dict[str, np.ndarray]
    flow_lps: dict[str, np.ndarray]

    @classmethod
    def from_outcomes(cls, outcomes: list[ScenarioOutcome], estimators) -> "RmseSummary":
        names = tuple(Estimator(e).value for e in estimators)
        ids = tuple(o.scenario_id for o in outcomes)
        head = {e: np.array([o.head_rmse_cm.get(e, np.nan) for o in outcomes]) for e in names}
        flow = {e: np.array([o.flow_rmse_lps.get(e, np.nan) for o in outcomes]) for e in names}
        return cls(names, ids, head, flow)

    @staticmethod
    def _stats(v: np.ndarray) -> tuple[float, float]:
        v = v[np.isfinite(v)]
        if v.size == 0:
            return float("nan"), float("nan")
        return float(v.mean()), float(v.std())

    def mean_std(self, variable: str) -> dict[str, tuple[float, float]]:
        table = self.head_cm if variable == "h" else self.flow_lps
        return {e: self._stats(table[e]) for e in self.estimators}

    def table(self) -> str:
        """Estimators as columns, ``h (cm)`` and ``q (L/s)`` rows, ``mean ± std`` cells."""
        cells = {var: {e: f"{m:.2f} ± {s:.2f}" for e, (m, s) in self.mean_std(var).items()} for var in ("h", "q")}
        width = max(14, *(len(e) for e in self.estimators), *(len(c) for v in cells.values() for c in v.values()))
        head = "Estimation RMSE (mean ± std)".ljust(10) + f", {len(self.scenario_ids)} scenarios"
        lines = [head, " " * 10 + "".join(e.rjust(width + 2) for e in self.estimators)]
        for var, label in (("h", "h (cm)"), ("q", "q (L/s)")):
            lines.append(label.ljust(10) + "".join(cells[var][e].rjust(width + 2) for e in self.estimators))
        return "\n".join(lines) + "\n"


@dataclass
class Comparison:
    baseline: str
    challenger: str
    head_deltas: np.ndarray
    flow_deltas: np.ndarray
    head_improvement_pct: float
    flow_improvement_pct: float


def _improvement(base: np.ndarray, other: np.ndarray) -> float:
    ok = np.isfinite(base) & np.isfinite(other)
    mb = float(base[ok].mean()) if ok.any() else float("nan")
    mo = float(other[ok].mean()) if ok.any() else float("nan")
    return 0.0 if mb == mo else 100.0 * (mb - mo) / mb


def compare_estimators(summaries) -> list[Comparison]:
    """Paired per-scenario deltas (challenger − baseline) for every ordered estimator pair.

    Positive improvement percentages mean the challenger has the lower mean RMSE.
    Summaries must cover the same scenarios; estimators are taken in column order.
    """
    summaries = list(summaries) if isinstance(summaries, (list, tuple)) else [summaries]
    ids = summaries[0].scenario_ids
    head, flow, names = {}, {}, []
    for k, s in enumerate(summaries):
        if s.scenario_ids != ids:
            raise ValidationError("summaries do not share the same scenario batch")
        for e in s.estimators:
            label = e if e not in head else f"{e}#{k}"
            head[label], flow[label] = s.head_cm[e], s.flow_lps[e]
            names.append(label)
    out = []
    for i, a in enumerate(names):
        for b in names[i + 1:]:
            out.append(Comparison(a, b, head[b] - head[a], flow[b] - flow[a],
                                  _improvement(head[a], head[b]), _improvement(flow[a], flow[b])))
    return out


def format_comparisons(comps: list[Comparison]) -> str:
    lines = ["baseline -> challenger: head / flow mean improvement (%)"]
    for c in comps:
        lines.append(f"{c.baseline} -> {c.challenger}: {c.head_improvement_pct:+.1f} / {c.flow_improvement_pct:+.1f}")
    return "\n".join(lines) + "\n"


# -- batch -----------------------------------------------------------------------------------

@dataclass
class BatchResult:
    config: RunConfig
    outcomes: list[ScenarioOutcome]
    summary: RmseSummary
    files: dict[str, Path]

    @property
    def failures(self) -> list[str]:
        return [o.scenario_id for o in self.outcomes if o.failed]

    @property
    def exit_code(self) -> int:
        return 1 if self.failures else 0


def build_tasks(config: RunConfig):
    network = load_network(config.network_path)
    layout = load_layout(config.layout_path, network)
    common = dict(network=network, layout=layout, estimators=config.estimators, config=config.estimator_config,
                  do_localize=config.localize, threshold=config.threshold)
    if config.scenario_batch_path is not None:
        batch: ScenarioBatch = load_batch(config.scenario_batch_path, network, root_seed=config.rng_seed)
        tasks = [ScenarioTask(scenario=s, noise=batch.noise, **common) for s in batch.scenarios]
    else:
        readings = ingest_measurements(config.measurement_ingest_path, layout, network)
        ref = readings.get(config.reference_scenario_id) if config.reference_scenario_id else None
        if config.reference_scenario_id and ref is None:
            raise ValidationError(f"reference scenario {config.reference_scenario_id!r} not in the measurements")
        tasks = [ScenarioTask(measurements=m, reference=ref, scenario_id=sid, **common)
                 for sid, m in sorted(readings.items()) if sid != config.reference_scenario_id]
    return network, layout, tasks


def run_batch(config: RunConfig) -> BatchResult:
    """Evaluate every scenario and write the batch outputs atomically to ``config.output_dir``."""
    network, _, tasks = build_tasks(config)
    if config.parallelism == 1 or len(tasks) <= 1:
        outcomes = [evaluate_scenario(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=config.parallelism) as pool:
            outcomes = list(pool.map(evaluate_scenario, tasks))
    outcomes.sort(key=lambda o: o.scenario_id)
    summary = RmseSummary.from_outcomes(outcomes, config.estimators)
    files = write_outputs(config, network, outcomes, summary)
    return BatchResult(config, outcomes, summary, files)


def _num(x):
    """JSON-safe float: NaN/inf become null so the output stays strict JSON."""
    if x is None:
        return None
    x = float(x)
    return x if np.isfinite(x) else None


def _report_dict(r: LocalizationReport) -> dict:
    return {"candidate_pipes": list(r.candidate_pipes), "b_c": r.b_c, "d_bar_c2l": _num(r.d_bar_c2l),
            "p_bar_c2l": _num(r.p_bar_c2l), "rho_c": _num(r.rho_c), "d_best_c2l": _num(r.d_best_c2l),
            "p_best_c2l": _num(r.p_best_c2l), "threshold": r.threshold, "best_pipe": r.best_pipe}


KPI_NAMES = ("b_c", "d_bar_c2l", "p_bar_c2l", "rho_c", "d_best_c2l", "p_best_c2l")


def _csv_text(header: str, columns, rows) -> str:
    buf = io.StringIO()
    buf.write(f"# {header} v{FORMAT_VERSION}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    w.writerows(rows)
    return buf.getvalue()


def results_document(config: RunConfig, network: NetworkModel, outcomes, summary: RmseSummary) -> dict:
    pipe_ids = [p.id for p in network.pipes]
    scenarios = []
    for o in outcomes:
        rec = {
            "scenario_id": o.scenario_id,
            "leak_pipe": None if o.leak_pipe is None else pipe_ids[o.leak_pipe],
            "head_rmse_cm": {e: _num(v) for e, v in sorted(o.head_rmse_cm.items())},
            "flow_rmse_lps": {e: _num(v) for e, v in sorted(o.flow_rmse_lps.items())},
            "errors": dict(sorted(o.errors.items())),
            "diagnostics": {e: d for e, d in sorted(o.diagnostics.items())},
            "localization": {e: dict(_report_dict(r), candidate_pipes=[pipe_ids[k] for k in r.candidate_pipes],
                                     best_pipe=None if r.best_pipe is None else pipe_ids[r.best_pipe],
                                     top_node_hops=o.top_hops.get(e))
                             for e, r in sorted(o.reports.items())},
            "candidates": {e: [pipe_ids[k] for k in c] for e, c in sorted(o.candidates_only.items())},
        }
        scenarios.append(rec)
    return {
        "format": RESULTS_FORMAT, "version": FORMAT_VERSION,
        "network": network.name,
        "estimators": list(summary.estimators),
        "summary": {var: {e: {"mean": _num(m), "std": _num(s)} for e, (m, s) in summary.mean_std(var).items()}
                    for var in ("h", "q")},
        "scenarios": scenarios,
        "failures": [o.scenario_id for o in outcomes if o.failed],
    }


def _fmt(v, spec: str) -> str:
    return "-" if v is None else format(v, spec)


def localization_table(doc: dict) -> str:
    """Per-scenario KPI rows with an AVERAGE row, one block per estimator."""
    lines = []
    for e in doc["estimators"]:
        rows = [(rec["scenario_id"], rec["localization"][e]) for rec in doc["scenarios"] if e in rec["localization"]]
        if not rows:
            continue
        lines.append(f"[{e}] leak localization (threshold {rows[0][1]['threshold']:g})")
        lines.append(f"{'scenario':<10}{'b_c':>5}{'d_bar(m)':>11}{'p_bar':>8}{'rho_c(%)':>10}"
                     f"{'d_best(m)':>11}{'p_best':>8}  candidates")
        for sid, r in rows:
            lines.append(f"{sid:<10}{int(r['b_c']):>5}{_fmt(r['d_bar_c2l'], '.2f'):>11}{_fmt(r['p_bar_c2l'], '.2f'):>8}"
                         f"{r['rho_c']:>10.2f}{_fmt(r['d_best_c2l'], '.2f'):>11}{_fmt(r['p_best_c2l'], '.2f'):>8}"
                         f"  {' '.join(r['candidate_pipes']) or '(none)'}")
        avg = {}
        for k in KPI_NAMES:
            vals = [float(r[k]) for _, r in rows if r[k] is not None]
            avg[k] = float(np.mean(vals)) if vals else None
        lines.append(f"{'AVERAGE':<10}{_fmt(avg['b_c'], '.2f'):>5}{_fmt(avg['d_bar_c2l'], '.2f'):>11}"
                     f"{_fmt(avg['p_bar_c2l'], '.2f'):>8}{_fmt(avg['rho_c'], '.2f'):>10}"
                     f"{_fmt(avg['d_best_c2l'], '.2f'):>11}{_fmt(avg['p_best_c2l'], '.2f'):>8}")
        lines.append("")
    return "\n".join(lines)


def summary_from_document(doc: dict) -> RmseSummary:
    names = tuple(doc["estimators"])
    recs = doc["scenarios"]
    nan = float("nan")
    pick = lambda rec, key, e: nan if rec[key].get(e) is None else rec[key][e]
    return RmseSummary(names, tuple(r["scenario_id"] for r in recs),
                       {e: np.array([pick(r, "head_rmse_cm", e) for r in recs]) for e in names},
                       {e: np.array([pick(r, "flow_rmse_lps", e) for r in recs]) for e in names})


def summary_text(doc: dict) -> str:
    """The human-readable batch report: RMSE table, comparisons, KPI tables, failures."""
    summary = summary_from_document(doc)
    text = ""
    if any(r["head_rmse_cm"] for r in doc["scenarios"]):
        text = summary.table()
        if len(summary.estimators) > 1:
            text += "\n" + format_comparisons(compare_estimators(summary))
    loc = localization_table(doc)
    if loc:
        text += "\n" + loc
    cands = [(r["scenario_id"], e, c) for r in doc["scenarios"] for e, c in r["candidates"].items()]
    if cands:
        text += "\ncandidate pipes (no ground truth)\n"
        text += "".join(f"{sid:<10}{e:<16}{' '.join(c) or '(none)'}\n" for sid, e, c in cands)
    if doc["failures"]:
        text += "\nfailed scenarios\n"
        for r in doc["scenarios"]:
            for e, msg in r["errors"].items():
                text += f"{r['scenario_id']:<10}{e:<16}{msg}\n"
    return text


def document_long_tables(doc: dict) -> dict[str, str]:
    """Plot-ready long tables derived from a results document."""
    rmse_rows, kpi_rows = [], []
    for rec in doc["scenarios"]:
        sid = rec["scenario_id"]
        for e in doc["estimators"]:
            for key, var, unit in (("head_rmse_cm", "h", "cm"), ("flow_rmse_lps", "q", "L/s")):
                if rec[key].get(e) is not None:
                    rmse_rows.append((sid, e, var, format_float(rec[key][e]), unit))
            if e in rec["localization"]:
                r = rec["localization"][e]
                for k in KPI_NAMES:
                    kpi_rows.append((sid, e, k, "" if r[k] is None else format_float(r[k])))
    return {
        "rmse_long.csv": _csv_text("hydrofuse.rmse_long", ("scenario_id", "estimator", "variable", "rmse", "unit"),
                                   rmse_rows),
        "kpi_long.csv": _csv_text("hydrofuse.kpi_long", ("scenario_id", "estimator", "kpi", "value"), kpi_rows),
    }


def estimates_table(network: NetworkModel, outcomes) -> str:
    node_ids = [n.id for n in network.nodes]
    pipe_ids = [p.id for p in network.pipes]
    rows = []
    for o in outcomes:
        for e in sorted(o.heads):
            rows.extend((o.scenario_id, e, "head", node_ids[i], format_float(v)) for i, v in enumerate(o.heads[e]))
            rows.extend((o.scenario_id, e, "flow", pipe_ids[k], format_float(v)) for k, v in enumerate(o.flows[e]))
    return _csv_text("hydrofuse.estimates_long", ("scenario_id", "estimator", "kind", "element_id", "value"), rows)


def load_results(path) -> dict:
    """Read a ``results.json`` (or the directory holding one) written by :func:`run_batch`."""
    path = Path(path)
    if path.is_dir():
        path = path / "results.json"
    return load_document(path, RESULTS_FORMAT)


def write_outputs(config: RunConfig, network: NetworkModel, outcomes, summary: RmseSummary) -> dict[str, Path]:
    out = Path(config.output_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ValidationError(f"cannot create output directory {out}: {exc.strerror}") from None
    if not os.access(out, os.W_OK):
        raise ValidationError(f"output directory {out} is not writable")
    doc = results_document(config, network, outcomes, summary)
    files = {"results.json": atomic_write_text(out / "results.json", dump_json(doc)),
             "summary.txt": atomic_write_text(out / "summary.txt", summary_text(doc))}
    for name, body in document_long_tables(doc).items():
        files[name] = atomic_write_text(out / name, body)
    files["estimates_long.csv"] = atomic_write_text(out / "estimates_long.csv", estimates_table(network, outcomes))
    for rec in doc["scenarios"]:
        if rec["localization"]:
            files[f"localization/{rec['scenario_id']}"] = atomic_write_text(
                out / "localization" / f"{rec['scenario_id']}.json",
                dump_json({"format": "hydrofuse.localization", "version": FORMAT_VERSION,
                           "scenario_id": rec["scenario_id"], "leak_pipe": rec["leak_pipe"],
                           "reports": rec["localization"]}))
    return files


# -- synthetic bundles -----------------------------------------------------------------------

DESK_NOISE = NoiseSpec(sigma_head=0.005, sigma_demand=0.005, sigma_flow=0.01)


def write_desk_bundle(directory, *, n_nodes: int, seed: int, scenarios: int = 5,
                      pressure_fraction: float = 0.15, amr_fraction: float = 0.15,
                      noise: NoiseSpec = DESK_NOISE, with_measurements: bool = False) -> dict[str, Path]:
    """Random network, layout and leak batch written as a ready-to-run input bundle.

    ``with_measurements`` also writes the noisy readings of every scenario
    (plus a leak-free ``REF`` snapshot) for the ingest path.
    """
    directory = Path(directory)
    net = random_network(n_nodes, seed, name=f"desk-{n_nodes}-{seed}")
    lay = desk_layout(net, seed, pressure_fraction=pressure_fraction, amr_fraction=amr_fraction)
    batch = ScenarioBatch(tuple(leak_batch(net, lay, scenarios, seed)), noise)
    files = {
        "network": save_network(net, directory / "network.json"),
        "layout": save_layout(lay, net, directory / "layout.json"),
        "scenarios": save_batch(batch, net, directory / "scenarios.json"),
    }
    if with_measurements:
        st = build_structural(net)
        records = []
        if batch.scenarios:
            ref = replace(batch.scenarios[0], leak_rate=0.0, scenario_id="REF")
            records.append(("REF", generate_scenario(net, lay, ref, noise, structural=st)[1]))
        for s in batch.scenarios:
            records.append((s.scenario_id, generate_scenario(net, lay, s, noise, structural=st)[1]))
        files["measurements"] = write_measurements(directory / "measurements.csv", records, lay, net)
    return files
