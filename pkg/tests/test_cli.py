import csv
import json

import pytest

from zkls import cli
from zkls.runio import RunManifest, atomic_write_text, parse_config, write_csv


def _json(path):
    return json.loads(path.read_text())


@pytest.mark.parametrize("L,verdict,witness", [
    ("1.0", "unstable", 1),
    ("0.8", "stable", None),
    ("0.894427191", "critical", None),
    ("critical", "critical", None),
])
def test_spectrum_verdicts(tmp_path, L, verdict, witness):
    out = tmp_path / "s"
    assert cli.main(["spectrum", "--c", "1", "--L", L, "--n-x", "256", "--out", str(out)]) == 0
    v = _json(out / "verdict.json")
    assert v["classification"] == verdict
    assert v["witness_mode"] == witness
    rows = list(csv.DictReader((out / "spectrum.csv").open()))
    assert [int(r["n"]) for r in rows] == [0, 1, 2, 3]
    assert float(rows[0]["lc_eig0"]) == pytest.approx(-1.25, abs=1e-8)
    man = _json(out / "manifest.json")
    assert man["subcommand"] == "spectrum"
    assert set(man["outputs"]) == {"spectrum.csv", "verdict.json"}


def test_evans_tables(tmp_path):
    out = tmp_path / "e"
    assert cli.main(["evans", "--a-values", "0.25,1.0", "--lambda-values", "0.1,1",
                     "--n-x", "512", "--out", str(out)]) == 0
    rows = list(csv.DictReader((out / "evans_roots.csv").open()))
    assert float(rows[0]["lambda_evans"]) == pytest.approx(0.19540394916, rel=1e-9)
    assert all(float(r["D_at_0plus"]) < 0 for r in rows)
    assert all(float(r["rel_diff"]) < 1e-6 for r in rows)
    surface = list(csv.DictReader((out / "evans_surface.csv").open()))
    assert len(surface) == 4
    summary = _json(out / "evans_summary.json")
    assert summary["D_at_0plus_negative"] is True
    # D(a, 50c) is far from 1 under the bi-orthogonal normalization
    assert summary["D50_within_0.05"] is False


def test_bifurcate_summary(tmp_path):
    out = tmp_path / "b"
    assert cli.main(["bifurcate", "--out", str(out)]) == 0
    s = _json(out / "bifurcation_summary.json")
    assert s["c_curvature"] > 0 and s["C2_formula"] > 0
    assert s["C2_rel_diff"] < 0.05
    rows = list(csv.DictReader((out / "branch.csv").open()))
    assert float(rows[0]["a"]) == 0.0
    assert float(rows[0]["mass"]) == pytest.approx(6.0 * 2 * 3.141592653589793 * 0.8944271909999159,
                                                   rel=1e-12)


SMALL_SIM = """# small stable run
c = 1.0
L = 0.5
delta = 1e-3   # perturbation size
n_x = 256
n_y = 8
t_end = 2
record_every = 20
diag_stride = 2
"""


def test_simulate_and_replay_bit_identical(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text(SMALL_SIM)
    out = tmp_path / "a"
    assert cli.main(["simulate", "--config", str(cfg), "--out", str(out)]) == 0
    s = _json(out / "summary.json")
    assert s["orbital_PASS"] and s["mass_PASS"]
    header = (out / "diagnostics.csv").read_text().splitlines()[0].split(",")
    for col in ("t", "rho", "c_mod", "a1", "a2", "eta_h1", "I", "J", "virial_functional"):
        assert col in header
    out2 = tmp_path / "b"
    assert cli.main(["replay", str(out / "manifest.json"), "--out", str(out2)]) == 0
    for name in ("ledger.csv", "diagnostics.csv"):
        assert (out / name).read_bytes() == (out2 / name).read_bytes()


def test_flag_overrides_config(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text(SMALL_SIM)
    out = tmp_path / "o"
    assert cli.main(["simulate", "--config", str(cfg), "--t-end", "1", "--diag-stride", "0",
                     "--out", str(out)]) == 0
    assert _json(out / "summary.json")["t_final"] == pytest.approx(1.0)
    assert _json(out / "manifest.json")["params"]["t_end"] == 1.0


def test_csv_precision(tmp_path):
    p = write_csv(tmp_path / "x.csv", ("v",), [(1 / 3,), (2.0 ** 0.5,)])
    vals = [r["v"] for r in csv.DictReader(p.open())]
    assert float(vals[0]) == 1 / 3
    assert len(vals[1].replace(".", "").lstrip("0")) >= 12


def test_atomic_write_leaves_no_temp(tmp_path):
    atomic_write_text(tmp_path / "f.txt", "hello")
    atomic_write_text(tmp_path / "f.txt", "again")
    assert [p.name for p in tmp_path.iterdir()] == ["f.txt"]
    assert (tmp_path / "f.txt").read_text() == "again"


def test_config_parser():
    cfg = parse_config("# comment\n\nc = 2  # trailing\nn-x=128\n")
    assert cfg == {"c": "2", "n_x": "128"}
    with pytest.raises(ValueError):
        parse_config("just words\n")


def test_unknown_flag_is_error():
    with pytest.raises(SystemExit) as exc:
        cli.main(["spectrum", "--bogus", "1"])
    assert exc.value.code == 2


def test_unknown_config_key_is_error(tmp_path):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("c = 1\nfoo = 2\n")
    assert cli.main(["spectrum", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2


def test_precondition_exit_code(tmp_path):
    # no unstable mode on the narrow torus
    code = cli.main(["simulate", "--L", "0.5", "--perturbation", "unstable", "--n-x", "256",
                     "--n-y", "8", "--t-end", "0.1", "--out", str(tmp_path / "o")])
    assert code == 2
    assert cli.main(["spectrum", "--c", "-1", "--out", str(tmp_path / "p")]) == 2


def test_help_lists_every_flag(capsys):
    for sub, schema in cli.SCHEMAS.items():
        with pytest.raises(SystemExit):
            cli.main([sub, "--help"])
        text = capsys.readouterr().out
        for key in schema:
            assert "--" + key.replace("_", "-") in text


def test_manifest_roundtrip(tmp_path):
    m = RunManifest("spectrum", {"c": 1.0}, seed=3, outputs=["a.csv"], wall_clock=0.5)
    m.write(tmp_path / "m.json")
    assert RunManifest.read(tmp_path / "m.json") == m


def test_threads_env(monkeypatch):
    monkeypatch.setenv("ZKLS_THREADS", "3")
    assert cli._threads() == 3
    monkeypatch.delenv("ZKLS_THREADS")
    assert cli._threads() == 1
