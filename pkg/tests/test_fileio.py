import json

import numpy as np
import pytest

from hydrofuse.errors import ParseError
from hydrofuse.fileio import (MEASUREMENT_HEADER, ScenarioBatch, atomic_write_text, format_float,
                              ingest_measurements, load_batch, load_document, load_layout, load_network,
                              save_batch, save_layout, save_network, write_measurements)
from hydrofuse.hydraulics import LeakScenario, NoiseSpec, generate_scenario
from hydrofuse.network import SensorLayout
from hydrofuse.synthetic import derive_seed

from conftest import make_network


@pytest.fixture
def small():
    net = make_network(4, [(0, 1), (1, 2), (1, 3)], elevations=[10.0, 5.0, 3.0, 4.0])
    return net, SensorLayout((0, 2), (2, 3), (0,))


def write_json(path, doc):
    path.write_text(json.dumps(doc, indent=2), encoding="utf-8")
    return path


class TestNetworkFiles:
    def test_round_trip(self, tmp_path, small):
        net, _ = small
        back = load_network(save_network(net, tmp_path / "net.json"))
        assert back == net

    def test_reports_line_of_bad_pipe(self, tmp_path, small):
        net, _ = small
        p = save_network(net, tmp_path / "net.json")
        doc = json.loads(p.read_text())
        doc["pipes"][2]["length"] = -1.0
        write_json(p, doc)
        with pytest.raises(ParseError, match="length must be positive") as err:
            load_network(p)
        lines = p.read_text().splitlines()[err.value.line - 1:]
        block = lines[: next(i for i, ln in enumerate(lines) if ln.strip().startswith("}")) + 1]
        assert any('"id": "P2"' in ln for ln in block)

    def test_unknown_field(self, tmp_path, small):
        net, _ = small
        p = save_network(net, tmp_path / "net.json")
        doc = json.loads(p.read_text())
        doc["nodes"][1]["colour"] = "red"
        write_json(p, doc)
        with pytest.raises(ParseError, match="unknown field"):
            load_network(p)

    def test_invalid_json_has_line(self, tmp_path):
        p = tmp_path / "bad.json"
        p.write_text('{\n  "format": "hydrofuse.network",\n  "version": 1,\n  oops\n}')
        with pytest.raises(ParseError) as err:
            load_network(p)
        assert err.value.line == 4

    def test_wrong_format_and_version(self, tmp_path, small):
        net, _ = small
        p = save_network(net, tmp_path / "net.json")
        with pytest.raises(ParseError, match="expected format"):
            load_document(p, "hydrofuse.layout")
        doc = json.loads(p.read_text())
        doc["version"] = 9
        write_json(p, doc)
        with pytest.raises(ParseError, match="unsupported"):
            load_network(p)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ParseError, match="cannot read"):
            load_network(tmp_path / "nope.json")

    def test_transforms(self, tmp_path, small):
        net, _ = small
        p = save_network(net, tmp_path / "net.json")
        doc = json.loads(p.read_text())
        doc["transforms"] = [{"op": "remove_node", "node": "N3"},
                             {"op": "set_inlet", "node": "N2", "head": 60.0, "exclusive": True}]
        write_json(p, doc)
        out = load_network(p)
        assert out.n == 3 and out.m == 2
        assert out.inlet_heads() == {2: 60.0}

    def test_transform_disconnects(self, tmp_path, small):
        net, _ = small
        p = save_network(net, tmp_path / "net.json")
        doc = json.loads(p.read_text())
        doc["transforms"] = [{"op": "remove_node", "node": "N1"}]
        write_json(p, doc)
        with pytest.raises(ParseError, match="invalid network"):
            load_network(p)


class TestLayoutAndBatch:
    def test_layout_round_trip(self, tmp_path, small):
        net, lay = small
        assert load_layout(save_layout(lay, net, tmp_path / "lay.json"), net) == lay

    def test_layout_unknown_id(self, tmp_path, small):
        net, lay = small
        p = save_layout(lay, net, tmp_path / "lay.json")
        doc = json.loads(p.read_text())
        doc["amr_nodes"].append("N99")
        write_json(p, doc)
        with pytest.raises(ParseError, match="N99"):
            load_layout(p, net)

    def test_batch_round_trip(self, tmp_path, small):
        net, _ = small
        batch = ScenarioBatch((LeakScenario(1, 2.5, 7, "t0", "A"), LeakScenario(2, 0.0, 8, "", "B")),
                              NoiseSpec(0.01, 0.02, 0.03, 0.1))
        assert load_batch(save_batch(batch, net, tmp_path / "b.json"), net) == batch

    def test_batch_seed_derivation(self, tmp_path, small):
        net, _ = small
        p = write_json(tmp_path / "b.json", {"format": "hydrofuse.scenarios", "version": 1,
                                             "scenarios": [{"leak_pipe": "P0", "leak_rate": 1.0},
                                                           {"leak_pipe": "P1", "leak_rate": 1.0}]})
        batch = load_batch(p, net, root_seed=5)
        assert [s.base_demand_seed for s in batch.scenarios] == [derive_seed(5, 0), derive_seed(5, 1)]
        assert [s.scenario_id for s in batch.scenarios] == ["S000", "S001"]
        with pytest.raises(ParseError, match="no seed"):
            load_batch(p, net)

    @pytest.mark.parametrize("rec, msg", [({"leak_pipe": "P9", "leak_rate": 1.0, "seed": 1}, "unknown leak pipe"),
                                          ({"leak_pipe": "P0", "leak_rate": -1.0, "seed": 1}, "nonnegative"),
                                          ({"leak_pipe": "P0", "leak_rate": 1.0, "seed": -3}, "seed")])
    def test_batch_errors(self, tmp_path, small, rec, msg):
        net, _ = small
        p = write_json(tmp_path / "b.json", {"format": "hydrofuse.scenarios", "version": 1, "scenarios": [rec]})
        with pytest.raises(ParseError, match=msg):
            load_batch(p, net)


class TestMeasurements:
    def test_generate_ingest_round_trip(self, tmp_path, small):
        net, lay = small
        noise = NoiseSpec(0.01, 0.01, 0.01)
        records = [(sid, generate_scenario(net, lay, LeakScenario(k, 1.0, 3 + k), noise)[1])
                   for k, sid in enumerate(["S1", "S0"])]
        back = ingest_measurements(write_measurements(tmp_path / "m.csv", records, lay, net), lay, net)
        assert list(back) == ["S0", "S1"]
        for sid, meas in records:
            for a, b in zip(vars(meas).values(), vars(back[sid]).values()):
                np.testing.assert_array_equal(a, b)

    def _csv(self, tmp_path, rows):
        p = tmp_path / "m.csv"
        p.write_text("\n".join([MEASUREMENT_HEADER, "scenario_id,sensor_kind,element_id,value,unit"] + rows) + "\n")
        return p

    def _full(self):
        return ["A,pressure,N0,50.0,m", "A,pressure,N2,48.0,m", "A,demand,N2,1.0,L/s", "A,demand,N3,2.0,L/s",
                "A,flow,P0,3.0,L/s"]

    def test_unknown_sensor_named(self, tmp_path, small):
        net, lay = small
        with pytest.raises(ParseError, match="'N1'") as err:
            ingest_measurements(self._csv(tmp_path, self._full() + ["A,pressure,N1,47.0,m"]), lay, net)
        assert err.value.line == 8

    def test_unit_mismatch(self, tmp_path, small):
        net, lay = small
        rows = self._full()
        rows[0] = "A,pressure,N0,50.0,kPa"
        with pytest.raises(ParseError, match="must be in m") as err:
            ingest_measurements(self._csv(tmp_path, rows), lay, net)
        assert err.value.line == 3

    def test_missing_sensors_listed(self, tmp_path, small):
        net, lay = small
        with pytest.raises(ParseError, match="demand:N3, flow:P0"):
            ingest_measurements(self._csv(tmp_path, self._full()[:3]), lay, net)

    def test_duplicate_reading(self, tmp_path, small):
        net, lay = small
        with pytest.raises(ParseError, match="duplicate"):
            ingest_measurements(self._csv(tmp_path, self._full() + ["A,flow,P0,3.0,L/s"]), lay, net)

    def test_header_required(self, tmp_path, small):
        net, lay = small
        p = tmp_path / "m.csv"
        p.write_text("scenario_id,sensor_kind,element_id,value,unit\n")
        with pytest.raises(ParseError) as err:
            ingest_measurements(p, lay, net)
        assert err.value.line == 1

    def test_format_float_round_trips(self):
        for x in (0.1, 1 / 3, 1e-17, 123456.789):
            assert float(format_float(x)) == x


class TestAtomicWrite:
    def test_creates_parents_and_replaces(self, tmp_path):
        p = tmp_path / "a" / "b.txt"
        atomic_write_text(p, "one")
        atomic_write_text(p, "two")
        assert p.read_text() == "two"
        assert [f.name for f in p.parent.iterdir()] == ["b.txt"]
