import subprocess
import sys

import pytest

from elexsim import fixtures
from elexsim.cli import main
from elexsim.waveform import Waveform

MIXED = "V1 1 0 1\nL1 1 2 1m\nS1 2 3 von=0 events()\nR 3 0 1\n.tran 1u 1m\n"
STIFF = "Vdc A 0 10\nS1 A B von=0 events()\nS2 B C von=0 events()\nR C 0 1e9\n.tran 1u 1u\n"


def _fx(name):
    return str(fixtures.path(name))


def _write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


class TestRun:
    def test_boost_rkf(self, tmp_path, capsys):
        out = tmp_path / "b.csv"
        assert main(["run", _fx("boost"), "--method", "rkf", "--out", str(out)]) == 0
        wf = Waveform.read_csv(out)
        assert wf.labels == ["i(L)", "v(3)"]
        stdout = capsys.readouterr().out
        assert "steps=" in stdout and "mean_h=" in stdout and "steady_state=yes" in stdout

    def test_fig6_one_row(self, capsys):
        assert main(["run", _fx("fig6")]) == 0
        wf = Waveform.from_csv(capsys.readouterr().out)
        assert len(wf) == 1 and wf["v(B)"][0] == 5.0

    def test_parse_error(self, tmp_path, capsys):
        assert main(["run", _write(tmp_path, "bad.cir", "V1 1 0 1\nX 1 2\n")]) == 1
        assert "unknown element" in capsys.readouterr().err

    def test_missing_file(self, tmp_path):
        assert main(["run", str(tmp_path / "nope.cir")]) == 1

    def test_unwritable_output(self, tmp_path):
        assert main(["run", _fx("fig6"), "--out", str(tmp_path / "no" / "x.csv")]) == 1

    def test_step_failure(self, tmp_path, capsys):
        text = fixtures.text("boost").replace("hmin=1e-13", "hmin=1e-6").replace(".tran 1e-7", ".tran 1e-6")
        text = text.replace("tol=1e-6", "tol=1e-14")
        assert main(["run", _write(tmp_path, "f.cir", text)]) == 2
        assert "t=" in capsys.readouterr().err

    def test_no_convergence(self, tmp_path, capsys):
        assert main(["run", _write(tmp_path, "s.cir", STIFF), "--method", "rp", "--rp", "1e3"]) == 2
        assert "did not converge" in capsys.readouterr().err

    def test_deterministic(self, tmp_path):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        main(["run", _fx("boost"), "--out", str(a)])
        main(["run", _fx("boost"), "--out", str(b)])
        assert a.read_bytes() == b.read_bytes()

    def test_dumps_and_plot(self, tmp_path, capsys):
        svg = tmp_path / "b.svg"
        assert main(["run", _fx("rl"), "--dump-topology", "--dump-system", "--out",
                     str(tmp_path / "r.csv"), "--plot", str(svg)]) == 0
        out = capsys.readouterr().out
        assert "branch b" in out and "ES:L" in out
        assert svg.read_text().startswith("<svg")


class TestCheck:
    def test_boost_dcm(self, capsys):
        assert main(["check", _fx("boost"), "--config", "S=off,D=off"]) == 0
        out = capsys.readouterr().out
        assert "CTDV:R3(L) i_Ld(L) = 0" in out
        assert "factorization=ok" in out

    def test_fig8_parallel(self, capsys):
        assert main(["check", _fx("fig8"), "--config", "S1=on,D4=on,S5=on,D6=on"]) == 0
        out = capsys.readouterr().out
        assert "KVL(D4)" not in out and "KVL(S1)" in out
        assert "parallel(" in out

    def test_bitstring_and_naive(self, capsys):
        assert main(["check", _fx("boost"), "--config", "00", "--naive"]) == 0
        assert "factorization=singular" in capsys.readouterr().out

    def test_unsupported(self, tmp_path, capsys):
        assert main(["check", _write(tmp_path, "m.cir", MIXED)]) == 1
        out = capsys.readouterr().out
        assert "unsupported topology" in out and "L1" in out

    @pytest.mark.parametrize("cfg", ["0", "S=maybe", "Q=on"])
    def test_bad_config(self, cfg):
        assert main(["check", _fx("boost"), "--config", cfg]) == 1


class TestCompareAndPlot:
    def test_compare(self, tmp_path, capsys):
        run, ora = tmp_path / "run.csv", tmp_path / "ora.csv"
        assert main(["run", _fx("rl"), "--method", "rkf", "--out", str(run)]) == 0
        assert main(["oracle", _fx("rl"), "--h", "1e-7", "--out", str(ora)]) == 0
        capsys.readouterr()
        assert main(["compare", str(run), str(ora), "--rtol", "1e-2"]) == 0
        assert "result=pass" in capsys.readouterr().out
        assert main(["compare", str(run), str(ora), "--rtol", "1e-12"]) == 2

    def test_compare_bad(self, tmp_path):
        assert main(["compare", _write(tmp_path, "e.csv", ""), _write(tmp_path, "f.csv", "")]) == 1

    def test_plot(self, tmp_path):
        csv = tmp_path / "b.csv"
        main(["run", _fx("boost"), "--out", str(csv)])
        svg = tmp_path / "b.svg"
        assert main(["plot", str(csv), "--out", str(svg)]) == 0
        text = svg.read_text()
        assert text.count("<polyline") == 2 and "i(L)" in text and "v(3)" in text

    def test_plot_empty(self, tmp_path):
        assert main(["plot", _write(tmp_path, "e.csv", ""), "--out", str(tmp_path / "x.svg")]) == 1

    def test_plot_single_point(self, tmp_path):
        csv = _write(tmp_path, "one.csv", "t,a\n0,1\n")
        svg = tmp_path / "one.svg"
        assert main(["plot", csv, "--out", str(svg)]) == 0
        assert 'class="marker"' in svg.read_text()


def test_entry_point():
    proc = subprocess.run([sys.executable, "-m", "elexsim.cli", "run", _fx("fig6")], capture_output=True, text=True)
    assert proc.returncode == 0
    assert proc.stdout.splitlines()[0] == "t,v(A),v(B),v(C),i(R)"
