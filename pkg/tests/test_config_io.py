import json

import numpy as np
import pytest

from conftest import U_HAT0
from mzgrid import io
from mzgrid.config import (SECTIONS, ConfigError, bundled_config_path, config_from_dict, load_config,
                           parse_config)
from mzgrid.dynamics import DEFAULT_U0, GridParams, Trajectory, simulate_full
from mzgrid.projection import HermiteBasis, build_quadrature

BUNDLED = ["3bus_default", "3bus_infinite", "3bus_memory_sweep", "3bus_dt1e-4_psweep", "heat_bath_sweep"]


def _minimal(**over):
    data = {"model": {"type": "3bus"}, "projection": {}, "integration": {}, "paths": {}}
    for key, value in over.items():
        data[key].update(value)
    return data


class TestConfig:
    @pytest.mark.parametrize("name", BUNDLED)
    def test_bundled_parse(self, name):
        cfg = load_config(name)
        assert cfg.source == str(bundled_config_path(name))

    def test_default_matches_reference_table(self):
        cfg = load_config("3bus_default")
        assert cfg.grid == GridParams(m1=0.052, m2=0.0531, b1=10, b2=10, b3=10, d1=0.05, d2=0.05, d3=0.005,
                                      p2=-2.0, p3=3.0, q3=0.1, epsilon=5.0, v1=0.9, v2=0.9)
        assert cfg.initial_state == tuple(DEFAULT_U0)
        assert cfg.integration.dt == 5e-5

    def test_defaults_applied(self):
        cfg = config_from_dict(_minimal())
        assert cfg.grid == GridParams()
        assert cfg.projection.variance == 1e-4 and cfg.projection.sparse_level == 7

    def test_empty_file(self, tmp_path):
        p = tmp_path / "empty.json"
        p.write_text("")
        with pytest.raises(ConfigError) as info:
            parse_config(p)
        for section in SECTIONS:
            assert section in str(info.value)

    def test_empty_object(self):
        with pytest.raises(ConfigError, match="model, projection, integration, paths"):
            config_from_dict({})

    def test_epsilon_zero(self):
        with pytest.raises(ConfigError, match="epsilon"):
            config_from_dict(_minimal(model={"params": {"epsilon": 0.0}}))

    @pytest.mark.parametrize("section,key", [("model", "color"), ("projection", "levle"),
                                             ("integration", "dtt"), ("paths", "kernal")])
    def test_unknown_keys(self, section, key):
        with pytest.raises(ConfigError, match=key):
            config_from_dict(_minimal(**{section: {key: 1}}))

    def test_unknown_param(self):
        with pytest.raises(ConfigError, match="m3"):
            config_from_dict(_minimal(model={"params": {"m3": 1.0}}))

    def test_unknown_top_level(self):
        data = _minimal()
        data["extra"] = {}
        with pytest.raises(ConfigError, match="extra"):
            config_from_dict(data)

    @pytest.mark.parametrize("bad", [{"dt": -1.0}, {"t_end": 0.0}, {"memory_mode": "finite"},
                                     {"scheme": "rk4"}, {"kernel_stride": 0}])
    def test_bad_integration(self, bad):
        with pytest.raises(ConfigError):
            config_from_dict(_minimal(integration=bad))

    def test_bad_initial_state(self):
        with pytest.raises(ConfigError):
            config_from_dict(_minimal(model={"initial_state": [0, 0, 0, 0, -1]}))

    def test_invalid_json(self, tmp_path):
        p = tmp_path / "bad.json"
        p.write_text("{model: }")
        with pytest.raises(ConfigError, match="invalid JSON"):
            parse_config(p)

    def test_heat_bath_section(self):
        cfg = load_config("heat_bath_sweep")
        assert cfg.model_type == "heat-bath" and cfg.bath.n_osc == 5
        assert cfg.integration.memory_sweep == (1.0, 2.0, 3.0)

    def test_hash_tracks_kernel_inputs(self):
        a = config_from_dict(_minimal())
        b = config_from_dict(_minimal(integration={"t_memory": 0.5, "memory_mode": "finite"}))
        c = config_from_dict(_minimal(projection={"order": 2}))
        assert a.kernel_hash() == b.kernel_hash()
        assert a.kernel_hash() != c.kernel_hash()

    def test_unknown_bundled(self):
        with pytest.raises(ConfigError):
            load_config("no_such_config")


class TestCsv:
    def test_trajectory_roundtrip(self, tmp_path):
        tr = simulate_full(DEFAULT_U0, 5e-5, 0.005)
        path = io.write_trajectory(tmp_path / "full.csv", tr)
        assert path.read_text().splitlines()[0] == "t,omega1,omega2,alpha2,alpha3,v3"
        back = io.read_trajectory(path)
        assert np.array_equal(back.states, tr.states) and np.array_equal(back.times, tr.times)

    def test_reduced_columns(self, tmp_path, short_tables):
        from mzgrid.reduced import ReducedConfig, simulate_reduced
        run = simulate_reduced(U_HAT0, ReducedConfig(t_end=0.01), short_tables)
        path = io.write_reduced(tmp_path / "r.csv", run.trajectory, run.memory)
        lines = path.read_text().splitlines()
        assert lines[0] == "t,omega1,omega2,alpha2,mem1,mem2,mem3"
        assert len(lines) == 1 + 21
        full = io.write_reduced(tmp_path / "rf.csv", run.trajectory, run.memory, stride=1)
        assert len(full.read_text().splitlines()) == 1 + 201

    def test_quadrature_export(self, tmp_path):
        rule = build_quadrature(HermiteBasis.around(U_HAT0, 1), 7)
        cols = io.read_csv(io.export_quadrature(tmp_path / "nodes.csv", rule))
        assert len(cols["weight"]) == 681
        assert np.array_equal(cols["omega1"], rule.nodes[:, 0])


class TestPlotData:
    def _tr(self, dt=0.1, n=11, labels=("omega1", "omega2", "alpha2")):
        t = dt * np.arange(n)
        return Trajectory(dt, t, np.column_stack([np.sin(t + i) for i in range(len(labels))]), labels)

    def test_identical_columns(self, tmp_path):
        a = self._tr()
        cols = io.read_csv(io.emit_plot_data(tmp_path / "f.csv", {"a": a, "b": a}))
        assert np.array_equal(cols["a:omega1"], cols["b:omega1"])

    def test_column_count(self, tmp_path):
        full = self._tr(labels=("omega1", "omega2", "alpha2", "alpha3", "v3"))
        runs = {"full": full, "r1": self._tr(), "r2": self._tr()}
        path = io.emit_plot_data(tmp_path / "f.csv", runs, labels=("omega1", "omega2", "alpha2"))
        assert len(path.read_text().splitlines()[0].split(",")) == 1 + 3 * 3

    def test_grid_mismatch(self, tmp_path):
        with pytest.raises(ValueError, match="incompatible"):
            io.emit_plot_data(tmp_path / "f.csv", {"a": self._tr(0.1, 11), "b": self._tr(0.05, 21)})
        path = io.emit_plot_data(tmp_path / "f.csv", {"a": self._tr(0.1, 11), "b": self._tr(0.05, 21)},
                                 resample=True)
        cols = io.read_csv(path)
        assert np.allclose(cols["a:omega1"], cols["b:omega1"])

    def test_deterministic(self, tmp_path):
        runs = {"a": self._tr(), "b": self._tr(0.1, 11, ("omega1",))}
        p1 = io.emit_plot_data(tmp_path / "1.csv", runs).read_bytes()
        p2 = io.emit_plot_data(tmp_path / "2.csv", runs).read_bytes()
        assert p1 == p2


class TestKernelBundle:
    def test_roundtrip_lossless(self, tmp_path, short_tables_p2):
        path = io.save_kernel(tmp_path / "k.npz", short_tables_p2, "abc123")
        back = io.load_kernel(path, "abc123")
        for name in ("f", "g", "gamma", "b", "memory_matrix"):
            assert np.array_equal(getattr(back, name), getattr(short_tables_p2, name)), name
        assert back.basis == short_tables_p2.basis
        assert back.dt_k == short_tables_p2.dt_k and back.horizon == short_tables_p2.horizon
        assert back.partition == short_tables_p2.partition and back.params == short_tables_p2.params

    def test_header(self, tmp_path, short_tables):
        h = io.read_kernel_header(io.save_kernel(tmp_path / "k.npz", short_tables, "h"))
        assert h["n_basis"] == 4 and h["enumeration"] == "graded-lexicographic"
        assert h["index_set"][1] == [1, 0, 0] and h["convention"] == "orthonormal"
        assert h["n_nodes"] == 681

    def test_hash_mismatch(self, tmp_path, short_tables):
        path = io.save_kernel(tmp_path / "k.npz", short_tables, "aaaa")
        with pytest.raises(io.BundleError, match="hash mismatch"):
            io.load_kernel(path, "bbbb")

    def test_not_a_bundle(self, tmp_path):
        p = tmp_path / "x.npz"
        np.savez(p, header=np.array(json.dumps({"format": "other"})),
                 **{k: np.zeros(1) for k in ("f", "g", "gamma", "b", "memory_matrix")})
        with pytest.raises(io.BundleError):
            io.load_kernel(p)
