import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pwcip import cli, fdgrid, lab
from pwcip.errors import ConfigError
from pwcip.fdgrid import GridSpec
from pwcip.forward import theta_mask

from conftest import optics_pipeline, MEDIA

SMALL = {"grid.z_samples": 11, "grid.t_samples": 13, "solver.max_iter": 15}


@pytest.fixture(scope="module")
def layered_small():
    return optics_pipeline(MEDIA["layered"](), GridSpec(z_samples=11, t_samples=13))[4]


def test_parse_config_values():
    text = """
    # comment
    medium.model = bump      # bare word
    medium.radius = 0.9
    grid.N = 8
    solver.precondition = false
    sweep.deltas = [0.1, 0.01]
    """
    v = lab.parse_config(text)
    assert v == {"medium.model": "bump", "medium.radius": 0.9, "grid.N": 8,
                 "solver.precondition": False, "sweep.deltas": [0.1, 0.01]}


@pytest.mark.parametrize("text,key", [
    ("grid.M = 3", "grid.M"),
    ("grid.N = [1,", "grid.N"),
    ("just words", "line 1"),
])
def test_parse_errors_name_the_key(text, key):
    with pytest.raises(ConfigError) as exc:
        lab.parse_config(text)
    assert exc.value.key == key and key in str(exc.value)


@pytest.mark.parametrize("values,key", [
    ({"grid.N": 2.5}, "grid.N"),
    ({"medium.model": "wavy"}, "medium.model"),
    ({"sweep.deltas": [0.1, 2.0]}, "sweep.deltas"),
    ({"solver.alpha": 0.9}, "solver.alpha"),
    ({"forward.T": 3.0}, "forward.T"),
    ({"solver.rho2": -1.0}, "solver.rho2"),
    ({"medium.model": "layered", "medium.radius": 0.5}, "medium.radius"),
    ({"carleman.lambdas": [10, 5]}, "carleman.lambdas"),
    ({"solver.precondition": 1}, "solver.precondition"),
])
def test_config_validation(values, key):
    with pytest.raises(ConfigError) as exc:
        lab.ExperimentConfig(values)
    assert exc.value.key == key


def test_derived_horizons():
    cfg = lab.ExperimentConfig({})
    assert cfg.alpha == pytest.approx(2.0 / 3.6)
    g = cfg.grid()
    assert g.T1 == pytest.approx(5.4) and g.t1 == pytest.approx(1.8)
    assert cfg.T == pytest.approx(6.6)
    assert cfg.medium().model == "layered"


def test_load_config_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        lab.load_config(tmp_path / "absent.cfg")


def test_field_dump_roundtrip(tmp_path):
    g = GridSpec(z_samples=11, t_samples=13)
    a = np.random.default_rng(0).normal(size=g.shape_t)
    p = tmp_path / "f.bin"
    lab.write_field(p, a, g, "w")
    raw = p.read_bytes()
    assert raw[:6] == b"PWCIP1"
    b, g2, name = lab.read_field(p)
    assert name == "w" and g2 == g and np.array_equal(a, b)
    (tmp_path / "bad.bin").write_bytes(b"nope" + raw)
    with pytest.raises(ValueError):
        lab.read_field(tmp_path / "bad.bin")


def test_json_and_csv_are_plain(tmp_path):
    lab.write_json(tmp_path / "a.json", {"b": np.float64(1.5), "a": np.arange(2), "c": float("nan"),
                                         "d": np.bool_(True)})
    assert json.loads((tmp_path / "a.json").read_text()) == {"a": [0, 1], "b": 1.5, "c": "nan", "d": True}
    lab.write_csv(tmp_path / "r.csv", [{"x": 0.1, "k": 2}])
    assert (tmp_path / "r.csv").read_text() == "k,x\n2,0.1\n"


@settings(max_examples=10, deadline=None)
@given(st.sampled_from([1e-1, 1e-2, 1e-3, 1e-4]), st.integers(0, 10**6))
def test_noise_has_prescribed_size(layered_small, delta, seed):
    noisy = lab.inject_noise(layered_small, delta, seed)
    g = noisy.grid
    assert fdgrid.norm(noisy.g0 - layered_small.g0, g, "H1h_Gamma") == pytest.approx(0.9 * delta, abs=1e-10)
    assert fdgrid.norm(noisy.g1 - layered_small.g1, g, "L2h_Gamma") == pytest.approx(0.9 * delta, abs=1e-10)
    assert fdgrid.norm(noisy.g2 - layered_small.g2, g, "L2h_Theta") == pytest.approx(0.9 * delta, abs=1e-10)
    # g2 noise stays on the side faces
    assert np.all((noisy.g2 - layered_small.g2)[~theta_mask(g)] == 0.0)


def test_noise_seeding(layered_small):
    a = lab.inject_noise(layered_small, 1e-2, 7)
    b = lab.inject_noise(layered_small, 1e-2, 7)
    c = lab.inject_noise(layered_small, 1e-2, 8)
    assert np.array_equal(a.g0, b.g0) and np.array_equal(a.g2, b.g2)
    assert not np.array_equal(a.g0, c.g0)
    with pytest.raises(ValueError):
        lab.inject_noise(layered_small, 1.5, 0)


def test_holder_bound():
    assert lab.holder_bound(1e-3) == pytest.approx(0.1 * np.log(1e3))
    assert lab.holder_bound(1e-3) == pytest.approx(0.6908, abs=1e-4)


def record(delta, err):
    return lab.StabilityRecord(delta, 1.0, {"n": err}, {"n": err}, lab.holder_bound(delta), 0, 0.0)


def test_fit_holder_recovers_power_law():
    recs = [record(d, 0.3 * lab.holder_bound(d) ** 1.1) for d in (1e-1, 1e-2, 1e-3, 1e-4)]
    fit = lab.fit_holder(recs, "n")
    assert fit["slope"] == pytest.approx(1.1) and fit["C2"] == pytest.approx(0.3)
    assert fit["monotone"] and fit["below_curve"] and fit["in_range"]


def test_fit_holder_flags_non_monotone():
    recs = [record(1e-1, 0.1), record(1e-2, 0.2), record(1e-3, 0.05)]
    fit = lab.fit_holder(recs, "n")
    assert not fit["monotone"]
    assert lab.fit_holder([record(1e-1, 0.0), record(1e-2, 0.0)], "n")["points"] == 0


def test_relative_error_of_truth():
    g = GridSpec(z_samples=11, t_samples=13)
    n = np.full(g.shape, 1.1)
    assert lab.relative_n_error(np.full((g.N, g.N, g.z_samples), 1.1), n) == 0.0
    assert lab.relative_n_error(np.full((g.N, g.N, g.z_samples), 1.21), n) == pytest.approx(0.1)


def test_layered_q_theta_from_data(layered_small):
    cfg = lab.ExperimentConfig(SMALL)
    q = lab.q_theta_for(cfg, layered_small)
    n = 1 + 0.2 * (lambda z: z**3 * (10 - 15 * z + 6 * z * z))(layered_small.grid.z)
    np.testing.assert_allclose(q, np.broadcast_to(n, q.shape), atol=1e-6)
    assert lab.q_theta_for(lab.ExperimentConfig(dict(SMALL, **{"medium.model": "bump"})), layered_small) is None


def write_cfg(tmp_path, values):
    p = tmp_path / "run.cfg"
    p.write_text("".join(f"{k} = {v!r}\n" for k, v in values.items()))
    return str(p)


def test_cli_error_codes(tmp_path, capsys):
    bad = tmp_path / "bad.cfg"
    bad.write_text("grid.N = nope!\n")
    assert cli.main(["validate-medium", "--config", str(bad), "--out", str(tmp_path / "o")]) == 1
    assert "grid.N" in capsys.readouterr().err
    assert cli.main(["validate-medium", "--threads", "0"]) == 2
    with pytest.raises(SystemExit):
        cli.main(["frobnicate"])


def test_cli_validate_medium(tmp_path):
    out = tmp_path / "v"
    assert cli.main(["validate-medium", "--out", str(out)]) == 0
    rep = json.loads((out / "validation.json").read_text())
    assert rep["passed"] is True


def test_invert_outputs_are_byte_identical(tmp_path):
    cfg = write_cfg(tmp_path, SMALL)
    dirs = [tmp_path / "a", tmp_path / "b"]
    for d in dirs:
        assert cli.main(["invert", "--config", cfg, "--out", str(d)]) == 0
    names = sorted(p.name for p in dirs[0].iterdir())
    assert names == ["inversion.json", "n_hat.bin", "tau_hat.bin", "trace.csv", "w_hat.bin"]
    for name in names:
        assert (dirs[0] / name).read_bytes() == (dirs[1] / name).read_bytes()
    w, g, _ = lab.read_field(dirs[0] / "w_hat.bin")
    assert w.shape == g.shape_t
