import math
from pathlib import Path

import pytest
import yaml

from dualpath.events import BreakerSet, LoadStep
from dualpath.scenario import (
    ParseError,
    ValidationError,
    load_config,
    parse_config,
    resolved_dict,
)
from dualpath.supervisor import Mode

SCENARIOS = Path(__file__).resolve().parents[1] / "scenarios"


def minimal_doc(**overrides):
    doc = {
        "name": "mini",
        "dt": 1e-4,
        "t_end": 1.0,
        "buses": ["g", "b"],
        "lines": [{"from": "g", "to": "b", "r": 0.01, "x": 0.05}],
        "grid_sources": [{"id": "src", "bus": "g", "v": 1.0, "r_s": 0.001, "x_s": 0.01}],
        "inverters": [{"id": "inv", "bus": "b", "mode": "gfl", "p_set": 0.2}],
    }
    doc.update(overrides)
    return doc


def test_minimal_config_fills_documented_defaults():
    cfg = parse_config(minimal_doc())
    inv = cfg.inverters[0]
    assert cfg.base.s_base == 5000.0 and cfg.base.v_base == 208.0
    assert inv.rating == 5000.0
    assert inv.mode is Mode.GFL
    assert inv.droop.m_p == 0.01
    assert inv.droop.n_q == 0.05
    assert inv.droop.k_r == 0.5
    assert inv.droop.omega_c == pytest.approx(2 * math.pi * 10)
    assert inv.vz.x_v == 0.05 and inv.vz.k_adapt == 0.0
    assert inv.detector.f_min == 59.3 and inv.detector.persist == 0.16
    assert inv.detector.recon_dtheta == pytest.approx(math.radians(10.0))
    assert inv.thresholds.eps_theta == pytest.approx(math.radians(5.0))
    assert inv.z_c == pytest.approx(0.005 + 0.05j)


def test_mismatched_k_r_names_all_inverters():
    doc = minimal_doc(
        buses=["g", "b", "c"],
        lines=[
            {"from": "g", "to": "b", "r": 0.01, "x": 0.05},
            {"from": "g", "to": "c", "r": 0.01, "x": 0.05},
        ],
        inverters=[
            {"id": "inv1", "bus": "b", "droop": {"k_r": 0.5}},
            {"id": "inv2", "bus": "c", "droop": {"k_r": 0.6}},
        ],
    )
    with pytest.raises(ValidationError) as exc:
        parse_config(doc)
    msg = str(exc.value)
    assert "inv1" in msg and "inv2" in msg and "k_r" in msg


def test_dt_bounds_enforced():
    with pytest.raises(ValidationError, match="dt"):
        parse_config(minimal_doc(dt=2e-3))
    with pytest.raises(ValidationError, match="dt"):
        parse_config(minimal_doc(dt=0.0))


def test_unknown_bus_and_target_reported_with_paths():
    doc = minimal_doc(
        loads=[{"id": "ld", "bus": "nope", "kind": "power", "p": 0.1}],
        events=[{"t": 0.5, "type": "load_step", "target": "ghost", "dp": 0.1}],
    )
    with pytest.raises(ValidationError) as exc:
        parse_config(doc)
    msg = str(exc.value)
    assert "loads[0].bus" in msg
    assert "events[0].target" in msg


def test_event_target_kind_checked():
    doc = minimal_doc(
        events=[{"t": 0.5, "type": "load_step", "target": "inv", "dp": 0.1}]
    )
    with pytest.raises(ValidationError, match="expected a load"):
        parse_config(doc)


def test_event_time_outside_run_rejected():
    doc = minimal_doc(
        events=[{"t": 5.0, "type": "mode_command", "target": "inv", "mode": "gfm"}]
    )
    with pytest.raises(ValidationError, match="outside"):
        parse_config(doc)


def test_events_sorted_by_time():
    doc = minimal_doc(
        loads=[{"id": "ld", "bus": "b", "kind": "power", "p": 0.1}],
        events=[
            {"t": 0.8, "type": "load_step", "target": "ld", "dp": 0.1},
            {"t": 0.2, "type": "load_step", "target": "ld", "dp": 0.1},
        ],
    )
    cfg = parse_config(doc)
    assert [te.t for te in cfg.events] == [0.2, 0.8]


def test_breaker_without_line_rejected():
    doc = minimal_doc(
        breakers=[{"id": "br", "from": "b", "to": "b"}],
    )
    doc["buses"] = ["g", "b", "c"]
    doc["breakers"] = [{"id": "br", "from": "b", "to": "c"}]
    with pytest.raises(ValidationError, match="no line"):
        parse_config(doc)


def test_duplicate_ids_rejected():
    doc = minimal_doc(
        loads=[{"id": "inv", "bus": "b", "kind": "power", "p": 0.1}],
    )
    with pytest.raises(ValidationError, match="duplicate id"):
        parse_config(doc)


def test_stability_bound_check():
    doc = minimal_doc(dt=1e-3)
    doc["inverters"][0]["droop"] = {"f_c": 200.0}  # omega_c*dt = 1.26
    with pytest.raises(ValidationError, match="omega_c"):
        parse_config(doc)


def test_unknown_event_type():
    doc = minimal_doc(events=[{"t": 0.1, "type": "explode", "target": "inv"}])
    with pytest.raises(ValidationError, match="unknown event type"):
        parse_config(doc)


def test_parse_error_on_bad_file(tmp_path):
    p = tmp_path / "bad.yaml"
    p.write_text("just a string")
    with pytest.raises(ParseError):
        load_config(p)
    p2 = tmp_path / "empty.yaml"
    p2.write_text("")
    with pytest.raises(ParseError):
        load_config(p2)


def test_canonical_testbed_loads():
    # two 30 kVA emulators, four 5 kVA / 208 V three-phase inverters
    cfg = load_config(SCENARIOS / "canonical_testbed.yaml")
    assert cfg.base.v_base == 208.0
    assert len(cfg.grid_sources) == 2
    assert all(src.rating == 30000.0 for src in cfg.grid_sources)
    assert len(cfg.inverters) == 4
    assert all(inv.rating == 5000.0 for inv in cfg.inverters)


def test_all_shipped_scenarios_load():
    names = sorted(p.name for p in SCENARIOS.glob("*.yaml"))
    assert len(names) >= 10
    for p in sorted(SCENARIOS.glob("*.yaml")):
        cfg = load_config(p)
        assert cfg.t_end > 0


def test_resolved_dict_roundtrips():
    cfg = parse_config(minimal_doc())
    echo = resolved_dict(cfg)
    # the echo must itself be a valid scenario describing the same system
    cfg2 = parse_config(yaml.safe_load(yaml.safe_dump(echo)))
    assert cfg2.buses == cfg.buses
    assert cfg2.inverters[0].droop.m_p == cfg.inverters[0].droop.m_p
    assert cfg2.inverters[0].detector.persist == cfg.inverters[0].detector.persist
    assert len(cfg2.events) == len(cfg.events)


def test_event_dataclass_parsing():
    doc = minimal_doc(
        breakers=[{"id": "br", "from": "g", "to": "b", "closed": True}],
        loads=[{"id": "ld", "bus": "b", "kind": "power", "p": 0.1}],
        events=[
            {"t": 0.1, "type": "breaker_set", "target": "br", "closed": False},
            {"t": 0.2, "type": "load_step", "target": "ld", "dp": -0.05, "dq": 0.01},
        ],
    )
    cfg = parse_config(doc)
    assert isinstance(cfg.events[0].event, BreakerSet)
    assert cfg.events[0].event.closed is False
    assert isinstance(cfg.events[1].event, LoadStep)
    assert cfg.events[1].event.dp == -0.05
