import csv
import json
import struct
from pathlib import Path

import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from sfsi.__main__ import main
from sfsi.cli_io import (PLOT_COLUMNS, TIMESERIES_COLUMNS, RunManifest, SnapshotError, emit_plot_data,
                         parse_config, parse_config_text, read_plot_data, read_snapshot, serialize_config,
                         snapshot_size, timeseries_text, write_snapshot, write_timeseries)
from sfsi.fluid_solver import FluidState
from sfsi.geometry import ConfigurationError
from sfsi.orchestrator import SweepReport, loglog_slope, run_path
from sfsi.params import SchemeParams
from sfsi.structure_solver import StructureState

REPO = Path(__file__).resolve().parents[1]
SMALL = dict(grid_nx=16, grid_nz=24, n_st=6, n_f_lateral=5, n_f_vertical=5, K=4, T_final=0.005)

DOCUMENTED_HEADER = (
    "t,kinetic,pressure_gamma,pressure_beta,structure_kinetic,structure_elastic,energy,dissipation_mu,"
    "dissipation_lambda,dissipation_eps,dissipation_structure,dissipation,penalty_structure,penalty_fluid,"
    "penalty,penalty_sq,martingale,quadratic_variation,exterior_mass,exterior_excess,"
    "trace_mismatch,trace_mismatch_sq_integral,"
    "interior_pressure,mass,min_rho,max_rho,div_inf,div_integral,hs_norm,min_height,tau_flag")


class TestConfig:
    def test_shipped_default_parses(self):
        params = parse_config(REPO / "configs" / "default.cfg")
        assert params == SchemeParams()

    def test_gamma_below_threshold_rejected(self):
        with pytest.raises(ConfigurationError, match="3/2"):
            parse_config_text("schema_version = 1\ngamma = 1.4\n")

    def test_beta_message_names_constraint(self):
        with pytest.raises(ConfigurationError, match=r"max\{4, γ\}"):
            parse_config_text("schema_version = 1\nbeta = 3.5\n")

    @pytest.mark.parametrize("text", [
        "schema_version = 1\ndleta = 0.01\n",
        "schema_version = 1\ndelta = 0.01\ndelta = 0.02\n",
        "schema_version = 1\ndelta = small\n",
        "delta = 0.01\n",
        "schema_version = 2\n",
        "schema_version = 1\njust some words\n",
    ])
    def test_malformed_configs_rejected(self, text):
        with pytest.raises(ConfigurationError):
            parse_config_text(text)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigurationError, match="cannot read"):
            parse_config(tmp_path / "absent.cfg")

    @given(st.floats(1e-4, 0.5), st.floats(1.6, 3.0), st.integers(4, 64), st.floats(0, 1))
    def test_round_trip(self, delta, gamma, nx, c0):
        try:
            params = SchemeParams(delta=delta, gamma=gamma, grid_nx=nx, noise_c0=c0)
        except ConfigurationError:
            assume(False)
        assert parse_config_text(serialize_config(params)) == params


def random_state(rng, dim=2, n_st=6, nx=16, nz=24, n_f=25, tau=None):
    grid_shape = (nx,) * (dim - 1) + (nz,)
    fluid = FluidState(rng.random(grid_shape), rng.normal(size=(dim, n_f)), 0.125)
    stopped = tau is not None
    structure = StructureState(rng.normal(size=n_st), rng.normal(size=n_st), rng.normal(size=n_st), stopped, tau,
                               0.125)
    return fluid, structure


class TestSnapshot:
    @pytest.mark.parametrize("dim,tau", [(2, None), (2, 0.0625), (3, None)])
    def test_round_trip(self, tmp_path, dim, tau):
        fluid, structure = random_state(np.random.default_rng(dim), dim=dim, nx=8, nz=12, tau=tau)
        path = tmp_path / "state.bin"
        write_snapshot(fluid, structure, path)
        fluid2, structure2 = read_snapshot(path)
        assert np.array_equal(fluid.rho, fluid2.rho) and np.array_equal(fluid.u_hat, fluid2.u_hat)
        for name in ("eta_hat", "v_hat", "eta_star_hat"):
            assert np.array_equal(getattr(structure, name), getattr(structure2, name))
        assert structure2.tau == tau and structure2.stopped == (tau is not None) and structure2.t == 0.125

    @pytest.mark.parametrize("dim,n_st,nx,nz,n_f", [(2, 6, 16, 24, 25), (2, 16, 64, 96, 204), (3, 9, 8, 12, 30)])
    def test_size_formula(self, tmp_path, dim, n_st, nx, nz, n_f):
        fluid, structure = random_state(np.random.default_rng(0), dim, n_st, nx, nz, n_f)
        path = tmp_path / "s.bin"
        write_snapshot(fluid, structure, path)
        header = 4 + 2 + 1 + 4 * 4
        payload = 8 * (3 * n_st + nx ** (dim - 1) * nz + dim * n_f)
        assert path.stat().st_size == header + payload + 16 == snapshot_size(dim, n_st, nx, nz, n_f)

    def test_layout_is_documented_order(self, tmp_path):
        fluid, structure = random_state(np.random.default_rng(1))
        path = tmp_path / "s.bin"
        write_snapshot(fluid, structure, path)
        data = path.read_bytes()
        assert data[:4] == b"SFSI"
        version, dim = struct.unpack_from("<HB", data, 4)
        assert (version, dim) == (1, 2)
        first = np.frombuffer(data, "<f8", count=6, offset=23)
        assert np.array_equal(first, structure.eta_hat)

    def test_corrupted_magic(self, tmp_path):
        fluid, structure = random_state(np.random.default_rng(2))
        path = tmp_path / "s.bin"
        write_snapshot(fluid, structure, path)
        data = bytearray(path.read_bytes())
        data[0:4] = b"XXXX"
        path.write_bytes(bytes(data))
        with pytest.raises(SnapshotError, match="magic"):
            read_snapshot(path)

    def test_truncated_and_wrong_version(self, tmp_path):
        fluid, structure = random_state(np.random.default_rng(3))
        path = tmp_path / "s.bin"
        write_snapshot(fluid, structure, path)
        data = path.read_bytes()
        path.write_bytes(data[:-9])
        with pytest.raises(SnapshotError, match="expected"):
            read_snapshot(path)
        path.write_bytes(data[:10])
        with pytest.raises(SnapshotError, match="truncated"):
            read_snapshot(path)
        path.write_bytes(data[:4] + struct.pack("<H", 9) + data[6:])
        with pytest.raises(SnapshotError, match="version"):
            read_snapshot(path)


class TestCsv:
    def test_header_schema(self):
        assert ",".join(TIMESERIES_COLUMNS) == DOCUMENTED_HEADER
        assert PLOT_COLUMNS == ("value", "quantity", "mean", "stderr", "slope")

    def test_rest_state_columns_constant(self, tmp_path):
        p = SchemeParams(noise_c0=0.0, **SMALL)
        from sfsi.orchestrator import Setup
        setup = Setup(p)
        n = setup.sbasis.n
        initial = (FluidState(np.ones(setup.grid.shape), np.zeros((2, setup.fbasis.n))),
                   StructureState(np.zeros(n), np.zeros(n), np.zeros(n)))
        traj = run_path(p, initial=initial, setup=setup)
        write_timeseries(traj, tmp_path / "ts.csv")
        with open(tmp_path / "ts.csv", newline="") as fh:
            rows = list(csv.DictReader(fh))
        assert list(rows[0]) == list(TIMESERIES_COLUMNS)
        assert max(abs(float(r["kinetic"])) for r in rows) < 1e-30
        for col in ("energy", "mass", "min_rho", "max_rho", "exterior_mass", "tau_flag"):
            column = np.array([float(r[col]) for r in rows])
            assert np.ptp(column) <= 1e-14 * max(1.0, np.abs(column).max()), col

    def test_identical_runs_give_identical_bytes(self):
        p = SchemeParams(**SMALL)
        assert timeseries_text(run_path(p, seed=3).records) == timeseries_text(run_path(p, seed=3).records)

    def test_plot_slope_matches_refit(self, tmp_path):
        from sfsi.orchestrator import EnsembleReport
        values = [1e-2, 3e-3, 1e-3, 3e-4]
        rng = np.random.default_rng(5)
        means = 0.4 * np.array(values) ** 0.55 * np.exp(0.05 * rng.normal(size=4))
        slope = loglog_slope(values, means)
        rows = [(v, "penalty_norm", m, 0.01 * m, slope) for v, m in zip(values, means)]
        ensembles = [EnsembleReport([0, 1], {}, {}) for _ in values]
        emit_plot_data(SweepReport("delta", values, ensembles, rows), tmp_path / "plot.csv")
        header = (tmp_path / "plot.csv").read_text().splitlines()[0]
        assert header == "delta,quantity,mean,stderr,slope"
        back = read_plot_data(tmp_path / "plot.csv")
        x = np.log([r[0] for r in back])
        y = np.log([r[2] for r in back])
        refit = np.polyfit(x, y, 1)[0]
        assert all(r[4] == pytest.approx(refit, rel=1e-12) for r in back)

    def test_write_error_names_path(self, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("x")
        with pytest.raises(OSError, match="file"):
            emit_plot_data(SweepReport("delta", [], [], []), blocker / "sub" / "plot.csv")


class TestCommandLine:
    def write_cfg(self, tmp_path, **extra):
        params = SchemeParams(**{**SMALL, **extra})
        path = tmp_path / "run.cfg"
        path.write_text(serialize_config(params))
        return path

    def test_run_writes_outputs(self, tmp_path):
        cfg = self.write_cfg(tmp_path)
        out = tmp_path / "out"
        assert main(["run", "--config", str(cfg), "--seed", "4", "--out-dir", str(out), "--stride", "2"]) == 0
        manifest = RunManifest.read(out / "manifest.json")
        assert manifest.seeds == [4] and manifest.statuses == {"4": "ok"}
        assert parse_config_text(serialize_config(SchemeParams(**manifest.params))) == SchemeParams(**manifest.params)
        snaps = sorted(out.glob("snapshot_*.bin"))
        assert len(snaps) == 4  # initial, steps 2 and 4, final
        read_snapshot(snaps[-1])
        first = (out / "timeseries.csv").read_bytes()
        assert main(["run", "--config", str(cfg), "--seed", "4", "--out-dir", str(tmp_path / "again")]) == 0
        assert (tmp_path / "again" / "timeseries.csv").read_bytes() == first

    def test_sweep_and_emit_plots(self, tmp_path):
        cfg = self.write_cfg(tmp_path)
        out = tmp_path / "sweep"
        assert main(["sweep", "--config", str(cfg), "--paths", "2", "--values", "0.01", "0.003",
                     "--out-dir", str(out)]) == 0
        original = (out / "plot_data.csv").read_text()
        payload = json.loads((out / "sweep.json").read_text())
        assert payload["param"] == "delta" and payload["values"] == [0.01, 0.003]
        (out / "plot_data.csv").unlink()
        assert main(["emit-plots", "--out-dir", str(out)]) == 0
        rebuilt = read_plot_data(out / "plot_data.csv")
        expected = read_plot_data_text(original)
        by_key = {(r[0], r[1]): r for r in rebuilt}
        for row in expected:
            assert by_key[(row[0], row[1])][2:4] == pytest.approx(row[2:4], rel=1e-12)

    def test_validate_noise(self, capsys):
        assert main(["validate-noise"]) == 0
        assert "hold" in capsys.readouterr().out

    def test_bad_config_exit_code(self, tmp_path, capsys):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("schema_version = 1\ngamma = 1.4\n")
        assert main(["run", "--config", str(cfg), "--out-dir", str(tmp_path)]) == 2
        assert "3/2" in capsys.readouterr().err


def read_plot_data_text(text):
    rows = list(csv.reader(text.splitlines()))[1:]
    return [(float(v), q, float(m), float(e), float(s)) for v, q, m, e, s in rows]
