"""Versioned text formats: network, sensor layout, scenario batch, measurements.

Structured files are JSON documents with a ``format``/``version`` header;
measurements are CSV with a ``# hydrofuse.measurements v1`` first line.
Elements are referenced by id at the boundary and resolved to indices here.
Every loader rejects unknown fields and reports errors as ``path:line: msg``.
"""

from __future__ import annotations

import csv
import io
import json
import os
import re
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import HydrofuseError, ParseError
from .hydraulics import LeakScenario, Measurements, NoiseSpec
from .network import NetworkModel, Node, Pipe, SensorLayout

FORMAT_VERSION = 1
MEASUREMENT_HEADER = "# hydrofuse.measurements v1"
MEASUREMENT_COLUMNS = ("scenario_id", "sensor_kind", "element_id", "value", "unit")
SENSOR_UNITS = {"pressure": "m", "demand": "L/s", "flow": "L/s"}

_NODE_FIELDS = {"id", "elevation", "is_inlet", "inlet_head", "base_demand"}
_PIPE_FIELDS = {"id", "source", "sink", "length", "diameter", "roughness"}
_TRANSFORMS = {"remove_node": {"op", "node"}, "set_inlet": {"op", "node", "head", "exclusive"}}


# -- low-level helpers ----------------------------------------------------------------------

def atomic_write_text(path, text: str) -> Path:
    """Write via a temp file in the same directory, then rename into place."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def dump_json(payload) -> str:
    return json.dumps(payload, indent=2, sort_keys=True, allow_nan=False) + "\n"


def _line_at(text: str, pos: int) -> int:
    return text.count("\n", 0, pos) + 1


def _array_lines(text: str, key: str) -> list[int]:
    """Line number of each element of the top-level array ``key`` (best effort)."""
    match = re.search(r'"%s"\s*:\s*\[' % re.escape(key), text)
    if not match:
        return []
    dec = json.JSONDecoder()
    pos = match.end()
    lines = []
    ws = re.compile(r"[\s,]*")
    while True:
        pos = ws.match(text, pos).end()
        if pos >= len(text) or text[pos] == "]":
            return lines
        try:
            _, end = dec.raw_decode(text, pos)
        except json.JSONDecodeError:
            return lines
        lines.append(_line_at(text, pos))
        pos = end


def _load_document(path, expected_format: str):
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ParseError(path, f"cannot read file: {exc.strerror}") from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(path, f"invalid JSON: {exc.msg}", exc.lineno) from None
    if not isinstance(doc, dict):
        raise ParseError(path, "top level must be an object", 1)
    fmt, version = doc.get("format"), doc.get("version")
    if fmt != expected_format:
        raise ParseError(path, f"expected format {expected_format!r}, found {fmt!r}", 1)
    if version != FORMAT_VERSION:
        raise ParseError(path, f"unsupported {expected_format} version {version!r} (supported: {FORMAT_VERSION})", 1)
    return text, doc


def load_document(path, expected_format: str) -> dict:
    """Parse a versioned JSON document, checking its format/version header."""
    return _load_document(path, expected_format)[1]


def _check_keys(path, record, allowed, required, where: str, line: int | None):
    if not isinstance(record, dict):
        raise ParseError(path, f"{where} must be an object", line)
    unknown = sorted(set(record) - allowed)
    if unknown:
        raise ParseError(path, f"{where}: unknown field(s) {', '.join(unknown)}", line)
    missing = sorted(required - set(record))
    if missing:
        raise ParseError(path, f"{where}: missing field(s) {', '.join(missing)}", line)


def _number(path, value, where, line, *, positive=False):
    if isinstance(value, bool) or not isinstance(value, (int, float)) or not np.isfinite(value):
        raise ParseError(path, f"{where} must be a finite number, got {value!r}", line)
    if positive and value <= 0:
        raise ParseError(path, f"{where} must be positive, got {value!r}", line)
    return float(value)


# -- network ---------------------------------------------------------------------------------

def network_to_dict(network: NetworkModel) -> dict:
    ids = [nd.id for nd in network.nodes]
    nodes = []
    for nd in network.nodes:
        rec = {"id": nd.id, "elevation": nd.elevation, "is_inlet": nd.is_inlet, "base_demand": nd.base_demand}
        if nd.inlet_head is not None:
            rec["inlet_head"] = nd.inlet_head
        nodes.append(rec)
    pipes = [{"id": p.id, "source": ids[p.source], "sink": ids[p.sink], "length": p.length,
              "diameter": p.diameter, "roughness": p.roughness} for p in network.pipes]
    return {"format": "hydrofuse.network", "version": FORMAT_VERSION, "name": network.name,
            "nodes": nodes, "pipes": pipes}


def save_network(network: NetworkModel, path) -> Path:
    return atomic_write_text(path, dump_json(network_to_dict(network)))


def load_network(path) -> NetworkModel:
    """Load a network file and apply its ``transforms`` in order."""
    text, doc = _load_document(path, "hydrofuse.network")
    _check_keys(path, doc, {"format", "version", "name", "nodes", "pipes", "transforms"},
                {"nodes", "pipes"}, "network", 1)
    node_lines = _array_lines(text, "nodes")
    pipe_lines = _array_lines(text, "pipes")
    nodes = []
    for i, rec in enumerate(doc["nodes"]):
        line = node_lines[i] if i < len(node_lines) else None
        _check_keys(path, rec, _NODE_FIELDS, {"id", "elevation"}, f"node #{i}", line)
        head = rec.get("inlet_head")
        nodes.append(Node(
            id=str(rec["id"]),
            elevation=_number(path, rec["elevation"], f"node {rec['id']} elevation", line),
            is_inlet=bool(rec.get("is_inlet", False)),
            inlet_head=None if head is None else _number(path, head, f"node {rec['id']} inlet_head", line),
            base_demand=_number(path, rec.get("base_demand", 0.0), f"node {rec['id']} base_demand", line),
        ))
    index = {}
    for i, nd in enumerate(nodes):
        if nd.id in index:
            raise ParseError(path, f"duplicate node id {nd.id!r}", node_lines[i] if i < len(node_lines) else None)
        index[nd.id] = i
    pipes = []
    for i, rec in enumerate(doc["pipes"]):
        line = pipe_lines[i] if i < len(pipe_lines) else None
        _check_keys(path, rec, _PIPE_FIELDS, _PIPE_FIELDS, f"pipe #{i}", line)
        for end in ("source", "sink"):
            if str(rec[end]) not in index:
                raise ParseError(path, f"pipe {rec['id']}: unknown {end} node {rec[end]!r}", line)
        pipes.append(Pipe(
            id=str(rec["id"]), source=index[str(rec["source"])], sink=index[str(rec["sink"])],
            length=_number(path, rec["length"], f"pipe {rec['id']} length", line, positive=True),
            diameter=_number(path, rec["diameter"], f"pipe {rec['id']} diameter", line, positive=True),
            roughness=_number(path, rec["roughness"], f"pipe {rec['id']} roughness", line, positive=True),
        ))
    name = str(doc.get("name", Path(path).stem))
    transforms = doc.get("transforms", [])
    t_lines = _array_lines(text, "transforms")
    try:
        if transforms:
            nodes, pipes = _apply_transforms(path, nodes, pipes, transforms, t_lines)
        network = NetworkModel(tuple(nodes), tuple(pipes), name)
    except ParseError:
        raise
    except HydrofuseError as exc:
        raise ParseError(path, f"invalid network: {exc}") from None
    return network


def _apply_transforms(path, nodes: list[Node], pipes: list[Pipe], transforms, lines):
    """Declarative graph surgery: drop a node (and its pipes) or make a node a fixed-head inlet."""
    for i, t in enumerate(transforms):
        line = lines[i] if i < len(lines) else None
        op = t.get("op") if isinstance(t, dict) else None
        if op not in _TRANSFORMS:
            raise ParseError(path, f"transform #{i}: unknown op {op!r}", line)
        _check_keys(path, t, _TRANSFORMS[op], {"op", "node"} | ({"head"} if op == "set_inlet" else set()),
                    f"transform #{i}", line)
        ids = [nd.id for nd in nodes]
        if t["node"] not in ids:
            raise ParseError(path, f"transform #{i}: unknown node {t['node']!r}", line)
        if op == "remove_node":
            drop = ids.index(t["node"])
            remap = {old: new for new, old in enumerate(j for j in range(len(nodes)) if j != drop)}
            pipes = [Pipe(p.id, remap[p.source], remap[p.sink], p.length, p.diameter, p.roughness)
                     for p in pipes if drop not in (p.source, p.sink)]
            nodes = [nd for j, nd in enumerate(nodes) if j != drop]
        else:
            head = _number(path, t["head"], f"transform #{i} head", line)
            exclusive = bool(t.get("exclusive", False))
            nodes = [
                Node(nd.id, nd.elevation, True, head, 0.0) if nd.id == t["node"]
                else (Node(nd.id, nd.elevation, False, None, nd.base_demand) if exclusive and nd.is_inlet else nd)
                for nd in nodes
            ]
    return nodes, pipes


# -- layout ----------------------------------------------------------------------------------

def layout_to_dict(layout: SensorLayout, network: NetworkModel) -> dict:
    return {
        "format": "hydrofuse.layout", "version": FORMAT_VERSION,
        "pressure_nodes": [network.nodes[i].id for i in layout.pressure_nodes],
        "amr_nodes": [network.nodes[i].id for i in layout.amr_nodes],
        "flow_pipes": [network.pipes[k].id for k in layout.flow_pipes],
    }


def save_layout(layout: SensorLayout, network: NetworkModel, path) -> Path:
    return atomic_write_text(path, dump_json(layout_to_dict(layout, network)))


def load_layout(path, network: NetworkModel) -> SensorLayout:
    text, doc = _load_document(path, "hydrofuse.layout")
    keys = {"pressure_nodes", "amr_nodes", "flow_pipes"}
    _check_keys(path, doc, keys | {"format", "version"}, keys, "layout", 1)
    resolved = {}
    for key, table in (("pressure_nodes", network.node_index), ("amr_nodes", network.node_index),
                       ("flow_pipes", network.pipe_index)):
        ids = [str(x) for x in doc[key]]
        unknown = [x for x in ids if x not in table]
        if unknown:
            match = re.search(r'"%s"' % re.escape(key), text)
            raise ParseError(path, f"{key}: unknown id(s) {', '.join(unknown)}",
                             _line_at(text, match.start()) if match else None)
        if len(set(ids)) != len(ids):
            raise ParseError(path, f"{key}: duplicate ids")
        resolved[key] = tuple(table[x] for x in ids)
    return SensorLayout(**resolved).check(network)


# -- scenario batch --------------------------------------------------------------------------

_SCENARIO_FIELDS = {"scenario_id", "leak_pipe", "leak_rate", "seed", "timestamp_label"}
_NOISE_FIELDS = {"sigma_head", "sigma_demand", "sigma_flow", "demand_spread"}


@dataclass(frozen=True)
class ScenarioBatch:
    scenarios: tuple[LeakScenario, ...]
    noise: NoiseSpec = NoiseSpec()


def batch_to_dict(batch: ScenarioBatch, network: NetworkModel) -> dict:
    return {
        "format": "hydrofuse.scenarios", "version": FORMAT_VERSION,
        "noise": {"sigma_head": batch.noise.sigma_head, "sigma_demand": batch.noise.sigma_demand,
                  "sigma_flow": batch.noise.sigma_flow, "demand_spread": batch.noise.demand_spread},
        "scenarios": [{"scenario_id": s.scenario_id, "leak_pipe": network.pipes[s.leak_pipe].id,
                       "leak_rate": s.leak_rate, "seed": s.base_demand_seed,
                       "timestamp_label": s.timestamp_label} for s in batch.scenarios],
    }


def save_batch(batch: ScenarioBatch, network: NetworkModel, path) -> Path:
    return atomic_write_text(path, dump_json(batch_to_dict(batch, network)))


def load_batch(path, network: NetworkModel, *, root_seed: int | None = None) -> ScenarioBatch:
    """Scenario entries without a ``seed`` get one derived from ``root_seed`` and their position."""
    from .synthetic import derive_seed

    text, doc = _load_document(path, "hydrofuse.scenarios")
    _check_keys(path, doc, {"format", "version", "scenarios", "noise"}, {"scenarios"}, "scenario batch", 1)
    noise = NoiseSpec()
    if "noise" in doc:
        _check_keys(path, doc["noise"], _NOISE_FIELDS, set(), "noise", None)
        noise = NoiseSpec(**{k: _number(path, v, f"noise {k}", None) for k, v in doc["noise"].items()})
    lines = _array_lines(text, "scenarios")
    out, seen = [], set()
    for i, rec in enumerate(doc["scenarios"]):
        line = lines[i] if i < len(lines) else None
        _check_keys(path, rec, _SCENARIO_FIELDS, {"leak_pipe", "leak_rate"}, f"scenario #{i}", line)
        pipe = str(rec["leak_pipe"])
        if pipe not in network.pipe_index:
            raise ParseError(path, f"scenario #{i}: unknown leak pipe {pipe!r}", line)
        sid = str(rec.get("scenario_id", f"S{i:03d}"))
        if sid in seen:
            raise ParseError(path, f"duplicate scenario id {sid!r}", line)
        seen.add(sid)
        rate = _number(path, rec["leak_rate"], f"scenario {sid} leak_rate", line)
        if rate < 0:
            raise ParseError(path, f"scenario {sid}: leak_rate must be nonnegative", line)
        if "seed" in rec:
            seed = rec["seed"]
            if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
                raise ParseError(path, f"scenario {sid}: seed must be a nonnegative integer", line)
        elif root_seed is not None:
            seed = derive_seed(root_seed, i)
        else:
            raise ParseError(path, f"scenario {sid}: no seed and no root seed to derive one", line)
        out.append(LeakScenario(network.pipe_index[pipe], rate, int(seed),
                                str(rec.get("timestamp_label", "")), sid))
    return ScenarioBatch(tuple(out), noise)


# -- measurements ----------------------------------------------------------------------------

def format_float(x: float) -> str:
    """Shortest repr that round-trips exactly."""
    return repr(float(x))


def measurements_to_rows(scenario_id: str, meas: Measurements, layout: SensorLayout,
                         network: NetworkModel) -> list[tuple[str, str, str, str, str]]:
    rows = []
    for i, v in zip(layout.pressure_nodes, meas.heads):
        rows.append((scenario_id, "pressure", network.nodes[i].id, format_float(v), SENSOR_UNITS["pressure"]))
    for i, v in zip(layout.amr_nodes, meas.demands):
        rows.append((scenario_id, "demand", network.nodes[i].id, format_float(v), SENSOR_UNITS["demand"]))
    for k, v in zip(layout.flow_pipes, meas.flows):
        rows.append((scenario_id, "flow", network.pipes[k].id, format_float(v), SENSOR_UNITS["flow"]))
    return rows


def write_measurements(path, records: list[tuple[str, Measurements]], layout: SensorLayout,
                       network: NetworkModel) -> Path:
    buf = io.StringIO()
    buf.write(MEASUREMENT_HEADER + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(MEASUREMENT_COLUMNS)
    for sid, meas in records:
        w.writerows(measurements_to_rows(sid, meas, layout, network))
    return atomic_write_text(path, buf.getvalue())


def ingest_measurements(path, layout: SensorLayout, network: NetworkModel) -> dict[str, Measurements]:
    """Parse a measurement CSV into per-scenario readings ordered as the layout.

    Every layout sensor must appear exactly once per scenario; rows naming
    elements without a sensor, or with the wrong unit, are rejected.
    """
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise ParseError(path, f"cannot read file: {exc.strerror}") from None
    if not lines or lines[0].strip() != MEASUREMENT_HEADER:
        raise ParseError(path, f"first line must be {MEASUREMENT_HEADER!r}", 1)
    reader = csv.reader(lines[1:])
    header = next(reader, None)
    if header is None or tuple(h.strip() for h in header) != MEASUREMENT_COLUMNS:
        raise ParseError(path, f"column header must be {','.join(MEASUREMENT_COLUMNS)}", 2)
    slots = {
        "pressure": {network.nodes[i].id: j for j, i in enumerate(layout.pressure_nodes)},
        "demand": {network.nodes[i].id: j for j, i in enumerate(layout.amr_nodes)},
        "flow": {network.pipes[k].id: j for j, k in enumerate(layout.flow_pipes)},
    }
    data: dict[str, dict[str, np.ndarray]] = {}
    for lineno, row in enumerate(reader, start=3):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(MEASUREMENT_COLUMNS):
            raise ParseError(path, f"expected {len(MEASUREMENT_COLUMNS)} columns, found {len(row)}", lineno)
        sid, kind, element, value, unit = (c.strip() for c in row)
        if kind not in SENSOR_UNITS:
            raise ParseError(path, f"unknown sensor kind {kind!r}", lineno)
        if unit != SENSOR_UNITS[kind]:
            raise ParseError(path, f"{kind} readings must be in {SENSOR_UNITS[kind]}, found {unit!r}", lineno)
        if element not in slots[kind]:
            raise ParseError(path, f"no {kind} sensor on element {element!r} in the layout", lineno)
        try:
            v = float(value)
        except ValueError:
            raise ParseError(path, f"value {value!r} is not a number", lineno) from None
        if not np.isfinite(v):
            raise ParseError(path, f"value {value!r} is not finite", lineno)
        entry = data.setdefault(sid, {k: np.full(len(s), np.nan) for k, s in slots.items()})
        j = slots[kind][element]
        if not np.isnan(entry[kind][j]):
            raise ParseError(path, f"duplicate {kind} reading for {element!r} in scenario {sid!r}", lineno)
        entry[kind][j] = v
    out = {}
    for sid in sorted(data):
        entry = data[sid]
        missing = [f"{kind}:{el}" for kind, s in slots.items() for el, j in s.items() if np.isnan(entry[kind][j])]
        if missing:
            raise ParseError(path, f"scenario {sid!r} is missing sensors: {', '.join(missing)}")
        out[sid] = Measurements(entry["pressure"], entry["demand"], entry["flow"])
    return out
