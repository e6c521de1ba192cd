import json

import numpy as np
import pytest

from measure_heat.config import build_experiment, load_config, parse_config
from measure_heat.errors import ConfigError

BASE = {
    "mesh": {"dim": 1, "extents": [1.0], "n_cells": [4]},
    "coefficient": {"kind": "constant_scalar", "values": 1.0},
    "measure": {"atoms": [{"x": 0.5, "weight": 1.0}]},
    "u0": {"preset": "green_scaled", "lambda": 2.0},
    "time": {"dt": 0.1, "t_end": 1.0},
    "output": {"dir": "out"},
    "seed": 7,
}


def cfg(**over):
    d = json.loads(json.dumps(BASE))
    d.update(over)
    return json.dumps(d)


def test_round_trip_identity():
    c = parse_config(cfg())
    again = parse_config(c.dumps())
    assert again == c
    assert again.dumps() == c.dumps()
    assert json.loads(c.dumps())["u0"]["lambda"] == 2.0


@pytest.mark.parametrize("path", [(), ("mesh",), ("measure",), ("time",)])
def test_unknown_keys_rejected(path):
    d = json.loads(cfg())
    target = d
    for p in path:
        target = target[p]
    target["bogus"] = 1
    with pytest.raises(ConfigError):
        parse_config(json.dumps(d))


def test_missing_time_stop():
    with pytest.raises(ConfigError):
        parse_config(cfg(time={"dt": 0.1}))


def test_load_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "nope.json")


def test_boundary_atom_rejected():
    c = parse_config(cfg(measure={"atoms": [{"x": 1.0}]}))
    with pytest.raises(ConfigError, match="strictly inside"):
        build_experiment(c)


def test_non_elliptic_rejected():
    c = parse_config(cfg(coefficient={"kind": "constant_scalar", "values": -1.0}))
    with pytest.raises(ConfigError):
        build_experiment(c)


def test_table_length_checked():
    c = parse_config(cfg(u0={"preset": "table", "data": [1.0, 2.0]}))
    with pytest.raises(ConfigError):
        build_experiment(c)


def test_atom_dimension_checked():
    c = parse_config(cfg(measure={"atoms": [{"x": 0.5, "y": 0.5}]}))
    with pytest.raises(ConfigError):
        build_experiment(c)


def test_presets():
    exp = build_experiment(parse_config(cfg()))
    np.testing.assert_allclose(exp.initial_data().values, [0.25, 0.5, 0.25], rtol=1e-13)
    exp = build_experiment(parse_config(cfg(u0={"preset": "linear_signed"})))
    np.testing.assert_allclose(exp.initial_data().values, [-0.25, 0.0, 0.25])
    exp = build_experiment(parse_config(cfg(g={"preset": "constant", "value": 3.0})))
    assert exp.source_schedule(4).shape == (4, 3)
    assert np.all(exp.source_schedule(4) == 3.0)


def test_random_presets_seeded():
    text = cfg(u0={"preset": "random"}, g={"preset": "random"}, measure={"density": {"preset": "random"}})
    a = build_experiment(parse_config(text))
    b = build_experiment(parse_config(text))
    c = build_experiment(parse_config(text), seed=8)
    np.testing.assert_array_equal(a.initial_data().values, b.initial_data().values)
    np.testing.assert_array_equal(a.source_schedule(3), b.source_schedule(3))
    assert not np.array_equal(a.initial_data().values, c.initial_data().values)
    assert a.measure.is_nonnegative
