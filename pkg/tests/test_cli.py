import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from freeconv import cli

SPECS = Path(__file__).resolve().parents[1] / "scripts" / "specs"


def spec(name):
    return str(SPECS / f"{name}.json")


def run(capsys, *argv):
    code = cli.run(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def diag_lines(err):
    return [json.loads(line) for line in err.splitlines() if line.strip()]


def read_csv(text):
    rows = [line.split(",") for line in text.strip().splitlines()]
    return rows


@pytest.fixture(autouse=True)
def no_env_threads(monkeypatch):
    monkeypatch.delenv("FREECONV_THREADS", raising=False)


class TestExamples:
    def test_density_semicircle(self, capsys, tmp_path):
        out = tmp_path / "rho.csv"
        code, _, _ = run(capsys, "density", "--measure", spec("semicircle"), "--t", "2",
                         "--grid", "-3:3:601", "--out", str(out))
        assert code == 0
        rows = read_csv(out.read_text())
        data = [r for r in rows if r[0] not in ("E", "e")]
        assert len(data) == 601
        E = np.array([float(r[0]) for r in data])
        rho = np.array([float(r[1]) for r in data])
        assert E[0] == -3.0 and E[-1] == 3.0
        assert rho[300] == pytest.approx(1 / (np.pi * np.sqrt(2)), abs=1e-6)
        assert json.loads((tmp_path / "rho.atoms.json").read_text())["atoms"] == []

    def test_critical_cusp(self, capsys):
        code, out, _ = run(capsys, "critical", "--measure", spec("cusp3atom"))
        assert code == 0
        cps = json.loads(out)
        assert len(cps) == 1
        assert cps[0]["t_star"] == pytest.approx(2.0, abs=1e-9)
        assert cps[0]["omega0"] == pytest.approx(0.0, abs=1e-9)
        assert cps[0]["z0"] == pytest.approx(0.0, abs=1e-9)

    def test_validate_bad_exponent(self, capsys):
        code, out, err = run(capsys, "validate", spec("bad_exponent"))
        assert code == 2 and out == ""
        assert diag_lines(err)[0]["error"] == "ExponentOutOfRange"


class TestSubcommands:
    def test_validate_inline(self, capsys):
        code, out, _ = run(capsys, "validate", '{"atoms": [{"location": 1, "mass": 0.25}, '
                                             '{"location": -1, "mass": 0.75}], "strict": false}')
        assert code == 0
        norm = json.loads(out)
        assert sum(a["mass"] for a in norm["atoms"]) == pytest.approx(1.0)

    def test_support(self, capsys):
        code, out, _ = run(capsys, "support", "--measure", spec("semicircle"), "--t", "2")
        rep = json.loads(out)
        assert code == 0
        assert rep["components_z"][0] == pytest.approx([-2 * np.sqrt(2), 2 * np.sqrt(2)], abs=1e-8)

    def test_atoms(self, capsys):
        code, out, _ = run(capsys, "atoms", "--measure", spec("cusp3atom"), "--t", "1.5")
        assert code == 0
        atoms = json.loads(out)
        assert [a["location"] for a in atoms] == pytest.approx([0.0], abs=1e-12)

    def test_edges_classify(self, capsys):
        code, out, _ = run(capsys, "edges", "--measure", spec("semicircle"), "--t", "2", "--classify")
        assert code == 0
        reps = json.loads(out)
        assert {r["kind"] for r in reps} == {"SquareRootLeft", "SquareRootRight"}

    def test_edges_plain(self, capsys):
        code, out, _ = run(capsys, "edges", "--measure", spec("semicircle"), "--t", "3")
        assert code == 0 and len(json.loads(out)) == 2

    def test_convolve_edges_needs_destination(self, capsys):
        code, _, err = run(capsys, "convolve", "--a", spec("semicircle"), "--b", spec("bernoulli"), "--edges")
        assert code == 2 and diag_lines(err)[0]["error"] == "UsageError"

    def test_convolve(self, capsys, tmp_path):
        out, rep = tmp_path / "c.csv", tmp_path / "c.json"
        code, _, _ = run(capsys, "convolve", "--a", spec("semicircle"), "--b", spec("semicircle"),
                         "--grid", "-3:3:61", "--edges", "--out", str(out), "--report", str(rep))
        assert code == 0
        report = json.loads(rep.read_text())
        assert [e["location_z"] for e in report["edges"]] == pytest.approx([-2 * np.sqrt(2), 2 * np.sqrt(2)], abs=1e-8)

    def test_validate_rmt_small(self, capsys):
        code, out, _ = run(capsys, "validate-rmt", "--measure", spec("semicircle"), "--t", "2",
                           "--n", "400", "--trials", "1", "--seed", "3")
        res = json.loads(out)
        assert code == 0 and res["passed"] and len(res["ks"]) == 1

    def test_validate_rmt_fail_exit(self, capsys):
        code, out, _ = run(capsys, "validate-rmt", "--measure", spec("semicircle"), "--t", "2",
                           "--n", "100", "--trials", "1", "--threshold", "1e-9")
        assert code == 1 and not json.loads(out)["passed"]


class TestErrors:
    @pytest.mark.parametrize("argv", [
        ["density", "--measure", "SEMI", "--t", "1", "--grid", "-3:3:11"],
        ["density", "--measure", "SEMI", "--t", "2", "--grid", "3:-3:11"],
        ["density", "--measure", "SEMI", "--t", "2", "--grid", "-3:3:1"],
        ["density", "--measure", "SEMI", "--t", "2", "--grid", "nonsense"],
        ["validate-rmt", "--measure", "SEMI", "--t", "2.5"],
        ["validate-rmt", "--n", "10"],
        ["frobnicate"],
        ["support", "--measure", "/does/not/exist.json", "--t", "2"],
        ["validate", "{not json"],
    ])
    def test_input_errors(self, capsys, argv):
        argv = [spec("semicircle") if a == "SEMI" else a for a in argv]
        code, _, err = run(capsys, *argv)
        assert code == 2
        assert all("error" in d for d in diag_lines(err))

    def test_bad_env_threads(self, capsys, monkeypatch):
        monkeypatch.setenv("FREECONV_THREADS", "many")
        code, _, _ = run(capsys, "support", "--measure", spec("semicircle"), "--t", "2")
        assert code == 2

    def test_conflict_exit(self, capsys):
        # just past the cusp the fit cannot decide between the two laws
        code, out, err = run(capsys, "edges", "--measure", spec("cusp3atom"), "--t", "2.001", "--classify")
        assert code in (0, 4)
        if code == 4:
            assert any(d["error"] in ("FitAmbiguous", "ClassificationConflict", "CaseMismatch")
                       for d in diag_lines(err))


class TestDeterminism:
    def _density(self, capsys, *extra):
        code, out, _ = run(capsys, *extra, "density", "--measure", spec("twocut"), "--t", "1.5",
                           "--grid", "-4:4:201")
        assert code == 0
        return out

    def test_thread_count_invariance(self, capsys, monkeypatch):
        a = self._density(capsys, "--threads", "1")
        b = self._density(capsys, "--threads", "4")
        monkeypatch.setenv("FREECONV_THREADS", "3")
        c = self._density(capsys, "--threads", "1")
        assert a == b == c

    def test_rmt_thread_invariance(self, capsys):
        args = ["validate-rmt", "--measure", spec("bernoulli"), "--t", "2", "--n", "200", "--trials", "3"]
        _, a, _ = run(capsys, "--threads", "1", *args)
        _, b, _ = run(capsys, "--threads", "3", *args)
        assert a == b

    def test_csv_roundtrip(self, capsys, tmp_path):
        out = tmp_path / "rho.csv"
        run(capsys, "density", "--measure", spec("semicircle"), "--t", "1.5", "--grid", "-2.5:2.5:51", "--out", str(out))
        from freeconv import spectrum
        from freeconv.measures import load
        from freeconv.transforms import hat_measure
        s = load(spec("semicircle"))
        E = cli.GridSpec.parse("-2.5:2.5:51").abscissae()
        grid = spectrum.semigroup_density_grid(hat_measure(s), s, 1.5, E, 1)
        rows = [r for r in read_csv(out.read_text()) if r[0] not in ("E", "e")]
        back = np.array([float(r[1]) for r in rows])
        ref = np.where(np.isfinite(grid.values), grid.values, np.nan)
        np.testing.assert_array_equal(back, ref)


def test_grid_spec():
    g = cli.GridSpec.parse("-1:1:5")
    assert list(g.abscissae()) == [-1.0, -0.5, 0.0, 0.5, 1.0]
    assert cli._join_negative_values(["--grid", "-3:3:5"]) == ["--grid=-3:3:5"]
    assert cli._join_negative_values(["--grid", "--out"]) == ["--grid", "--out"]


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "freeconv", "critical", "--measure", spec("cusp3atom")],
                       capture_output=True, text=True, timeout=120)
    assert r.returncode == 0
    assert json.loads(r.stdout)[0]["t_star"] == pytest.approx(2.0, abs=1e-9)
