import math
import os

import numpy as np
import pytest

import cbflab

FIXTURES = os.path.join(os.path.dirname(__file__), "..", "..", "fixtures")


def test_expressions():
    e = cbflab.parse_expr("sin(x1*x2)")
    d = e.diff("x1")
    assert d.eval({"x1": 0.3, "x2": 0.7}) == pytest.approx(0.7 * math.cos(0.21), rel=1e-12)
    assert e.free_variables() == {"x1", "x2"}
    assert cbflab.parse_expr(str(e)).eval({"x1": 0.5, "x2": 1.5}) == e.eval({"x1": 0.5, "x2": 1.5})
    with pytest.raises(cbflab.ParseError):
        cbflab.parse_expr("1 + * x1")


def test_euler_characteristics():
    disk = cbflab.SafeSet("1 - x1^2 - x2^2", [-1.5, -1.5], [1.5, 1.5])
    assert disk.euler_characteristic() == 1
    annulus = cbflab.SafeSet("4*(x1^2 + x2^2 - 0.25)*(1 - x1^2 - x2^2)", [-1.5, -1.5], [1.5, 1.5])
    assert annulus.euler_characteristic() == 0
    ball = cbflab.SafeSet("1 - x1^2 - x2^2 - x3^2", [-1.5] * 3, [1.5] * 3, 24)
    assert ball.boundary_euler_characteristic() == 2


def test_boundary_samples_and_zeros():
    disk = cbflab.SafeSet("1 - x1^2 - x2^2", [-1.5, -1.5], [1.5, 1.5])
    pts = disk.boundary_sample(50)
    assert len(pts) >= 50
    assert max(abs(disk.h(p)) for p in pts) < 1e-9
    zeros = cbflab.locate_zeros(["-x1 + 0.2", "-x2"], disk)
    assert len(zeros) == 1
    assert np.allclose(zeros[0]["point"], [0.2, 0.0], atol=1e-9)
    assert zeros[0]["isolated"]


def test_forward_invariance():
    disk = cbflab.SafeSet("1 - x1^2 - x2^2", [-1.5, -1.5], [1.5, 1.5])
    assert cbflab.forward_invariance(["-x1", "-x2"], disk, 20, 5.0)["passed"]
    out = cbflab.forward_invariance(["x1", "x2"], disk, 20, 5.0)
    assert not out["passed"]
    assert len(out["witness_start"]) == 2


def test_run_commands():
    report, code = cbflab.run("brockett", path=os.path.join(FIXTURES, "nonholonomic.cfg"))
    assert code == 2
    assert report["results"]["outcome"] == "violated"
    text = open(os.path.join(FIXTURES, "unit_disk.cfg")).read()
    report, code = cbflab.run("euler", config=text)
    assert code == 0
    assert report["results"]["chi"] == 1
    assert "euler" in cbflab.commands()
    with pytest.raises(cbflab.ConfigError):
        cbflab.run("euler", config="system: {type: bogus}\n")
