import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from csgtopo import cli
from csgtopo.config import (build_problem, load_position_model, parse_config_text, read_config_file,
                            resolve_config, write_config_file)
from csgtopo.export import (HISTORY_HEADER, export_design, export_history, parse_design,
                            read_field, read_history, read_pgm, write_field)
from csgtopo.optimizer import IterationRecord


def records(n):
    return [IterationRecord(k, 10.0 / k, 10.1 / k, 0.4 - 1e-9 * k, 3.0, 2.0 + k, 0.5, 12.3456789)
            for k in range(1, n + 1)]


def test_history_header_and_row_count(tmp_path):
    export_history(records(3), tmp_path / "h.csv")
    lines = (tmp_path / "h.csv").read_text().splitlines()
    assert lines[0] == "loop,Compl,Cp,volume,penal,beta,eta,wall_ms"
    assert len(lines) == 4
    assert HISTORY_HEADER == lines[0].split(",")


def test_history_round_trip_and_empty(tmp_path):
    recs = records(5)
    export_history(recs, tmp_path / "h.csv")
    assert read_history(tmp_path / "h.csv") == recs
    export_history([], tmp_path / "e.csv")
    assert (tmp_path / "e.csv").read_text().splitlines() == [",".join(HISTORY_HEADER)]
    assert read_history(tmp_path / "e.csv") == []


def test_design_image_examples(tmp_path):
    export_design(np.ones(6), 3, 2, tmp_path / "a.pgm")
    assert np.all(read_pgm(tmp_path / "a.pgm") == 0)
    export_design(np.zeros(6), 3, 2, tmp_path / "b.pgm")
    assert np.all(read_pgm(tmp_path / "b.pgm") == 255)
    # column-major element order: the 2x2 checkerboard [[1,0],[0,1]]
    export_design(np.array([1.0, 0.0, 0.0, 1.0]), 2, 2, tmp_path / "c.pgm")
    np.testing.assert_array_equal(read_pgm(tmp_path / "c.pgm"), [[0, 255], [255, 0]])
    assert (tmp_path / "c.pgm").read_bytes().startswith(b"P5\n2 2\n255\n")


def test_design_export_validates(tmp_path):
    with pytest.raises(ValueError):
        export_design(np.full(4, 1.2), 2, 2, tmp_path / "x.pgm")
    with pytest.raises(ValueError):
        export_design(np.ones(5), 2, 2, tmp_path / "x.pgm")


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 9), st.integers(1, 9), st.data())
def test_design_image_round_trip(tmp_path_factory, nelx, nely, data):
    x = data.draw(arrays(float, nelx * nely, elements=st.floats(0, 1)))
    path = tmp_path_factory.mktemp("img") / "d.pgm"
    export_design(x, nelx, nely, path)
    assert np.max(np.abs(parse_design(path) - x)) <= 1 / 255


def test_field_dump_round_trip_is_row_major(tmp_path):
    x = np.random.default_rng(0).uniform(size=12)
    write_field(x, 4, 3, tmp_path / "f.txt")
    np.testing.assert_array_equal(read_field(tmp_path / "f.txt", 4, 3), x)
    first = float((tmp_path / "f.txt").read_text().split()[1])
    assert first == x[3]  # second entry of the top row is element (row 0, column 1)
    with pytest.raises(ValueError):
        read_field(tmp_path / "f.txt", 5, 3)


def test_config_text_parsing():
    vals = parse_config_text("""
        # comment
        nelx = 90
        ftBC=D
        nonD = 3
        betaCnt = 1, 8, 25, 2
        Emin=1e-6
        symmetrize_dc = true
    """.replace("betaCnt", "beta_schedule"))
    assert vals == {"nelx": 90, "ftbc": "D", "non_d": 3, "beta_schedule": (1.0, 8.0, 25.0, 2.0),
                    "emin": 1e-6, "symmetrize_dc": True}
    with pytest.raises(KeyError):
        parse_config_text("bogus=1")
    with pytest.raises(ValueError):
        parse_config_text("nelx")


def test_config_layering(tmp_path):
    (tmp_path / "c.txt").write_text("preset=load\nrmin=5.0\nmaxit=7\n")
    cfg = resolve_config(read_config_file(tmp_path / "c.txt"), {"maxit": 9})
    assert cfg.preset == "load" and cfg.opt.rmin == 5.0 and cfg.opt.maxit == 9
    assert resolve_config({"preset": "load"}).opt.rmin == 6.4
    assert resolve_config({"preset": "beam"}).opt.move == 2.5e-3
    assert resolve_config().opt.rmin == 3.2
    with pytest.raises(ValueError):
        resolve_config({"preset": "bridge"})


def test_config_file_round_trip(tmp_path):
    cfg = resolve_config(cli_values={"preset": "beam", "seed": 4, "beta_schedule": "2,16,50,1"})
    write_config_file(cfg, tmp_path / "c.txt")
    again = resolve_config(read_config_file(tmp_path / "c.txt"))
    assert again == cfg


TOY = ["--nelx", "12", "--nely", "6", "--rmin", "1.5", "--maxit", "3", "--set", "L=2",
       "--set", "nonD=0"]


def test_cli_run_writes_artifacts(tmp_path, capsys):
    out = tmp_path / "run"
    assert cli.main(["run", *TOY, "--out", str(out), "--eval-cadence", "2", "--dump-weights"]) == 0
    for name in ("history.csv", "design.pgm", "design.txt", "evaluation.json", "config.txt",
                 "scenario_compliance.txt", "evaluations.csv", "weights.csv"):
        assert (out / name).exists(), name
    assert len(read_history(out / "history.csv")) == 3
    rep = json.loads((out / "evaluation.json").read_text())
    assert rep["n_scenarios"] == 11 * 5 and rep["E"] > 0
    assert (out / "evaluations.csv").read_text().splitlines()[1].startswith("2,")
    assert "E=" in capsys.readouterr().out


def test_cli_evaluate_and_study(tmp_path, capsys):
    out = tmp_path / "run"
    cli.main(["run", *TOY, "--out", str(out)])
    capsys.readouterr()
    assert cli.main(["evaluate", *TOY, "--field", str(out / "design.txt"), "--J", "1.0"]) == 0
    rep = json.loads(capsys.readouterr().out)
    expected = json.loads((out / "evaluation.json").read_text())["E"]
    assert rep["E"] == pytest.approx(expected, rel=1e-12)
    assert cli.main(["integration-study", *TOY, "--field", str(out / "design.txt"),
                     "--steps", "50", "--seeds", "2", "--out", str(out)]) == 0
    assert len((out / "integration_error.csv").read_text().splitlines()) == 51


def test_cli_ensemble_and_dataset(tmp_path, capsys):
    assert cli.main(["ensemble", *TOY, "--runs", "2", "--cadence", "3", "--q", "0.5",
                     "--out", str(tmp_path)]) == 0
    assert (tmp_path / "quantiles.csv").read_text().splitlines()[0] == "loop,q0.5"
    path = tmp_path / "d.txt"
    assert cli.main(["synth-dataset", "--nelx", "36", "--seed", "1", "--output", str(path)]) == 0
    data = np.loadtxt(path, dtype=int)
    assert data.size == 400_000 and data.min() >= 1 and data.max() <= 37
    # the same seed synthesizes the same dataset inside a run
    cfg = resolve_config(cli_values={"preset": "load", "nelx": 36, "nely": 12, "seed": 1})
    np.testing.assert_array_equal(load_position_model(cfg, build_problem(cfg)).dataset, data)


def test_cli_load_preset_with_dataset(tmp_path):
    path = tmp_path / "d.txt"
    cli.main(["synth-dataset", "--nelx", "24", "--output", str(path)])
    out = tmp_path / "load"
    assert cli.main(["run", "--preset", "load", "--nelx", "24", "--nely", "8", "--maxit", "2",
                     "--rmin", "2", "--dataset", str(path), "--type", "uniform", "--bsz", "2",
                     "--maxsmpl", "4", "--out", str(out)]) == 0
    assert json.loads((out / "evaluation.json").read_text())["n_scenarios"] <= 25


def test_cli_reports_bad_input(tmp_path, capsys):
    assert cli.main(["run", *TOY, "--set", "volfrac=1.5", "--out", str(tmp_path)]) == 2
    assert "volfrac" in capsys.readouterr().err
    with pytest.raises(SystemExit):
        cli.main(["run", "--preset", "bridge"])
