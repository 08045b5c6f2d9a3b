import csv
import json

import pytest

from reifenberg import cli
from reifenberg.harness import (ROW_FIELDS, RunConfig, family_measure, read_report_csv, run_ensemble, spearman,
                                spec_id, worker_count, write_report_csv)
from reifenberg.measure import read_measure_json
from reifenberg.reifenberg import InvariantViolation, ScaleLadder, build_covering, squash_experiment


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    assert cli.run_cli(["generate", "--snowflake", "--theta", "0.3", "--gens", "3", "--scale", "3",
                        "--out", str(d / "flake.json")]) == 0
    assert cli.run_cli(["generate", "--snowflake", "--theta", "0.3", "--gens", "3",
                        "--out", str(d / "flake.csv")]) == 0
    return d


def run_json(capsys, argv):
    code = cli.run_cli(argv)
    out = capsys.readouterr().out
    return code, json.loads(out) if out.strip().startswith(("{", "[")) else out


# ------------------------------------------------------------------ config

def test_config_round_trip(tmp_path):
    cfg = RunConfig(q=4.0, rho=1 / 3, tau=1e-3, generations=[3, 4], M0=5.0)
    cfg.dump(tmp_path / "c.json")
    assert RunConfig.load(tmp_path / "c.json") == cfg


def test_config_rejects_unknown_and_invalid():
    with pytest.raises(ValueError, match="unknown"):
        RunConfig.from_dict({"q": 2.0, "colour": "red"})
    for bad in ({"q": 1.0}, {"rho": 1.0}, {"tau": -1.0}, {"scale": 0}, {"mode": "max"}, {"M0": 0.0},
                {"mesh_edge": 0.0}, {"generations": [-1]}):
        with pytest.raises(ValueError):
            RunConfig(**bad)


def test_spec_id_and_family_measures():
    assert spec_id("veryflat", 0.1, 4, 2.0) == "veryflat_p0.1_g04_q2"
    cfg = RunConfig(scale=3)
    for fam in ("veryflat", "flat", "graph", "lattice"):
        mu = family_measure(fam, 0.1 if fam != "lattice" else 1, 3, cfg)
        assert len(mu) > 1 and mu.description.startswith(fam)
    with pytest.raises(ValueError):
        family_measure("koch", 0.1, 3, cfg)


def test_worker_count(monkeypatch):
    monkeypatch.setenv("REIFENBERG_THREADS", "3")
    assert worker_count(10) == 3 and worker_count(2) == 2
    monkeypatch.setenv("REIFENBERG_THREADS", "0")
    assert worker_count(5) == 1


def test_spearman():
    assert spearman([1, 2, 3, 4], [10, 20, 30, 40]) == pytest.approx(1.0)
    assert spearman([1, 2, 3], [3, 2, 1]) == pytest.approx(-1.0)


# ------------------------------------------------------------------ ensemble

@pytest.fixture(scope="module")
def ensemble_rows():
    return run_ensemble("veryflat", [0.1, 0.2, 0.3], [4, 5, 6, 7], RunConfig(scale=3))


def test_ensemble_grid(ensemble_rows):
    assert len(ensemble_rows) == 12
    ids = [r["spec_id"] for r in ensemble_rows]
    assert ids == sorted(ids) and len(set(ids)) == 12
    assert all(r["failure"] == "" and r["ratio_sup"] > 0 for r in ensemble_rows)


def test_ensemble_csv(tmp_path, ensemble_rows):
    write_report_csv(ensemble_rows, tmp_path / "e.csv")
    with open(tmp_path / "e.csv", newline="") as fh:
        assert next(csv.reader(fh)) == ROW_FIELDS
    back = read_report_csv(tmp_path / "e.csv")
    assert len(back) == 12
    assert [float(r["J_sup"]) for r in back] == [r["J_sup"] for r in ensemble_rows]
    assert back[0]["claim1_pass"] in ("true", "false") and back[0]["M"] == ""


def test_ensemble_is_thread_independent(monkeypatch, ensemble_rows):
    monkeypatch.setenv("REIFENBERG_THREADS", "1")
    serial = run_ensemble("veryflat", [0.1, 0.2, 0.3], [4, 5, 6, 7], RunConfig(scale=3))
    assert serial == ensemble_rows


# ------------------------------------------------------------------ CLI

def test_generate_outputs(workdir):
    mu = read_measure_json(workdir / "flake.json")
    assert mu.k == 1 and len(mu) > 10
    with open(workdir / "flake.csv") as fh:
        lines = fh.read().splitlines()
    assert lines[0] == "x,y" and len(lines) == 4 ** 3 + 2


def test_generate_lattice_summary(capsys):
    code, doc = run_json(capsys, ["generate", "--lattice", "1", "2", "--scale", "2", "--rho", "0.5"])
    assert code == 0 and doc["atoms"] == 5 and doc["n"] == 2


def test_measure_commands(workdir, capsys):
    inp = str(workdir / "flake.json")
    code, doc = run_json(capsys, ["beta", "--input", inp, "--x", "0,0", "--r", "0.5"])
    assert code == 0 and doc["beta"] > 0 and len(doc["plane"]["frame"]) == 1
    code, doc = run_json(capsys, ["jones", "--input", inp, "--x", "0,0", "--r", "0.5"])
    assert code == 0 and doc["J"] >= 0
    code, doc = run_json(capsys, ["flatness", "--input", inp, "--q", "4"])
    assert code == 0 and doc["J_sup"] > 0


def test_cover_and_verify(workdir, capsys, tmp_path):
    inp = str(workdir / "flake.json")
    code, doc = run_json(capsys, ["cover", "--input", inp, "--no-surfaces", "--M0", "10"])
    assert code == 0 and doc["hierarchy"]["M"] == 10.0
    code, doc = run_json(capsys, ["cover", "--input", inp, "--off-dir", str(tmp_path / "off"), "--no-beta-sums"])
    assert code == 0 and doc["report"]["comparison_pass"]
    assert len(list((tmp_path / "off").glob("T*.off"))) == len(doc["report"]["rows"])
    code, doc = run_json(capsys, ["verify", "--input", inp, "--mode", "avg", "--construct"])
    assert code == 0 and doc["mode"] == "avg" and doc["claim1_pass"]


def test_cli_ensemble(tmp_path):
    out = tmp_path / "e.csv"
    code = cli.run_cli(["ensemble", "--family", "lattice", "--c", "1", "--gens", "0", "--scale", "3",
                        "--qs", "2,4", "--out", str(out)])
    assert code == 0 and len(read_report_csv(out)) == 2


def test_exit_codes(workdir, capsys, monkeypatch):
    assert cli.run_cli([]) == 2
    assert cli.run_cli(["beta", "--input", "x.json"]) == 2
    assert cli.run_cli(["plot", "--kind", "curve", "--out", "x.svg"]) == 2
    assert cli.run_cli(["flatness", "--input", str(workdir / "missing.json")]) == 1
    assert cli.run_cli(["cover", "--input", str(workdir / "flake.json"), "--no-surfaces"]) == 1
    assert cli.run_cli(["generate"]) == 1
    capsys.readouterr()

    def boom(*a, **kw):
        raise InvariantViolation("claim2.coverage", "forced")
    monkeypatch.setattr(cli, "build_covering", boom)
    assert cli.run_cli(["cover", "--input", str(workdir / "flake.json"), "--no-surfaces", "--M0", "1"]) == 3
    err = json.loads(capsys.readouterr().err)
    assert err["identifier"] == "claim2.coverage"


# ------------------------------------------------------------------ figures

def test_curve_svg_deterministic(workdir, tmp_path):
    for name in ("a.svg", "b.svg"):
        assert cli.run_cli(["plot", "--kind", "curve", "--input", str(workdir / "flake.csv"),
                            "--out", str(tmp_path / name)]) == 0
    a, b = (tmp_path / "a.svg").read_bytes(), (tmp_path / "b.svg").read_bytes()
    assert a == b and a.startswith(b"<?xml") and b"<path" in a


def test_covering_svg_counts_circles(workdir, tmp_path, capsys):
    inp = str(workdir / "flake.json")
    code, doc = run_json(capsys, ["plot", "--kind", "covering", "--input", inp, "--M0", "10", "--at-scale", "2",
                                  "--out", str(tmp_path / "c.svg")])
    mu = read_measure_json(inp)
    rec = build_covering(mu, ScaleLadder.for_measure(mu), 10.0).scales[2]
    expect = len(rec.good) + len(rec.bad) + len(rec.fin)
    assert code == 0 and doc["circles"] == expect
    text = (tmp_path / "c.svg").read_text()
    assert sum(text.count(f'class="{c}"') for c in ("good", "bad", "fin")) == expect
    assert text.count("<circle") == expect + 1  # plus the unit circle


def test_surface_svg(workdir, tmp_path):
    assert cli.run_cli(["plot", "--kind", "surface", "--input", str(workdir / "flake.json"),
                        "--out", str(tmp_path / "s.svg")]) == 0
    assert b"<svg" in (tmp_path / "s.svg").read_bytes()


def test_scaling_plot_annotation(tmp_path, capsys):
    code, doc = run_json(capsys, ["plot", "--kind", "scaling-plot", "--points", "4", "--out", str(tmp_path / "p.svg")])
    expect = squash_experiment([0.1 / 2 ** j for j in range(4)])["slope"]
    assert code == 0 and doc["slope"] == expect
    assert f"slope = {float(expect)!r}" in (tmp_path / "p.svg").read_text()
