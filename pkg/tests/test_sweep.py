import hashlib
import json

import pytest

from qdphotons import cli
from qdphotons.model import ConfigError
from qdphotons.pathint import ResourceError
from qdphotons.sweep import (RESULT_COLUMNS, SweepSpec, convergence_report, read_results, run_sweep)

from conftest import toy_config


def digest(path):
    return hashlib.md5(path.read_bytes()).hexdigest()


def spec(tmp_path, **kw):
    opts = dict(temperatures=(4.0,), lambdas=(0.0, 1.0), modes=("exact", "qrt"), preset=None,
                out_dir=tmp_path, base=toy_config(), with_n=False)
    opts.update(kw)
    return SweepSpec(**opts)


@pytest.fixture(scope="module")
def first_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("sweep")
    return out, run_sweep(spec(out))


def test_rows_and_columns(first_run):
    out, res = first_run
    assert res.ok and res.computed == 4
    rows = read_results(res.results_csv)
    assert [(r["lambda"], r["mode"]) for r in rows] == [(0.0, "exact"), (0.0, "qrt"), (1.0, "exact"), (1.0, "qrt")]
    assert res.results_csv.read_text().splitlines()[0] == ",".join(RESULT_COLUMNS)
    free_ex, free_qrt = rows[0], rows[1]
    assert free_ex["I"] == pytest.approx(free_qrt["I"], abs=1e-8)
    assert free_ex["Q_I"] == 0.0 and free_qrt["Q_P"] < 1e-10
    assert rows[3]["Q_I"] == pytest.approx(abs(rows[2]["I"] - rows[3]["I"]) / rows[2]["I"], rel=1e-6)
    heat = (out / "heatmap_I_exact.csv").read_text().splitlines()
    assert heat[0] == "T_K\\lambda,0,1" and heat[1].startswith("4,")


def test_resume_is_byte_identical(first_run):
    out, res = first_run
    before = digest(res.results_csv)
    again = run_sweep(spec(out, resume=True))
    assert again.computed == 0
    assert digest(again.results_csv) == before


def test_worker_count_does_not_change_output(first_run, tmp_path):
    out, res = first_run
    par = run_sweep(spec(tmp_path, workers=2))
    assert digest(par.results_csv) == digest(res.results_csv)


def test_failures_are_recorded_per_point(tmp_path, monkeypatch):
    from qdphotons import sweep

    def boom(config, mode):
        if config.bath.scale > 0:
            raise ResourceError("too big")
        return orig(config, mode)
    orig = sweep.compute_figures
    monkeypatch.setattr(sweep, "compute_figures", boom)
    res = run_sweep(spec(tmp_path, modes=("qrt",)))
    assert res.failed == 1
    assert "ResourceError" in res.rows[1]["error"] and res.rows[0]["error"] == ""


def test_spec_validation(tmp_path):
    with pytest.raises(ConfigError):
        spec(tmp_path, modes=())
    with pytest.raises(ConfigError):
        spec(tmp_path, modes=("lindblad",))
    with pytest.raises(ConfigError):
        spec(tmp_path, lambdas=())


def test_convergence_bath_free():
    rep = convergence_report((4.0, 0.0), [(0.5, 3, 4), (0.5, 5, 4), (0.5, 9, 4)], base=toy_config())
    assert rep.converged
    assert all(max(r.delta.values()) < 1e-6 for r in rep.rungs[1:])
    assert rep.to_csv().splitlines()[0].startswith("dt,n_c,stride,P,I,B")
    with pytest.raises(ConfigError):
        convergence_report((4.0, 0.0), [(0.5, 3, 4)])


def test_convergence_resource_error_is_per_rung(monkeypatch):
    from qdphotons import sweep
    orig = sweep.compute_figures

    def capped(config, mode):
        if config.grid.n_c > 4:
            raise ResourceError("memory cap")
        return orig(config, mode)
    monkeypatch.setattr(sweep, "compute_figures", capped)
    rep = convergence_report((4.0, 1.0), [(0.5, 2, 4), (0.5, 8, 4)], base=toy_config())
    assert rep.rungs[0].figures is not None and not rep.rungs[0].memory_ok
    assert rep.rungs[1].error.startswith("ResourceError")
    assert not rep.converged


def test_cli_point_and_errors(tmp_path, capsys):
    cfg = tmp_path / "toy.json"
    base = toy_config()
    cfg.write_text(json.dumps(base.to_dict()))
    code = cli.main(["--config", str(cfg), "--point", "4,0", "--modes", "qrt", "--no-n", "--out", str(tmp_path / "o")])
    assert code == 0
    assert capsys.readouterr().out.startswith("T_K,lambda,mode")
    assert (tmp_path / "o" / "results.csv").exists()
    assert cli.main(["--config", str(tmp_path / "missing.json"), "--point", "4,0"]) == 2
    with pytest.raises(SystemExit):
        cli.main(["--point", "4,0", "--modes", "bogus"])
    with pytest.raises(SystemExit):
        cli.main(["--modes", "qrt"])
