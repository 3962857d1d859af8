import numpy as np
import pytest

from elexsim.waveform import (
    Waveform,
    WaveformError,
    compare_waveforms,
    periodic_change,
    sample_at,
    to_svg,
)


def _wf(t, **cols):
    return Waveform.from_arrays(t, cols)


class TestWaveform:
    def test_append_monotone(self):
        wf = Waveform(["a"])
        wf.append(0.0, [1.0])
        with pytest.raises(WaveformError):
            wf.append(0.0, [2.0])

    def test_csv_round_trip(self):
        wf = Waveform(["v(1)", "i(L)"], n_states=1)
        wf.append(0.0, [1.0, 0.1], [0.0])
        wf.mark(0.0, "10")
        wf.append(1e-6, [1.0 / 3.0, 2e-300], [1.0])
        wf.mark(1e-6, "01")
        text = wf.to_csv()
        assert text.splitlines()[0] == "t,v(1),i(L)"
        assert "# event t=0 cfg=10" in text
        back = Waveform.from_csv(text)
        assert np.array_equal(back.data, wf.data)
        assert back.events == wf.events
        assert back.to_csv() == text

    @pytest.mark.parametrize("text", ["", "x,a\n0,1\n", "t,a\n0,1,2\n", "t,a\n0,zz\n", "t,a\n1,1\n0,1\n"])
    def test_bad_csv(self, text):
        with pytest.raises(WaveformError):
            Waveform.from_csv(text)


class TestCompare:
    def test_identical(self):
        a = _wf([0, 1, 2], y=[1.0, 2.0, 3.0])
        r = compare_waveforms(a, a)["y"]
        assert r == {"max_abs": 0.0, "rel_l2": 0.0}

    def test_interpolates(self):
        a = _wf([0.0, 0.5, 1.0], y=[0.0, 0.5, 1.0])
        b = _wf([0.0, 1.0], y=[0.0, 1.0])
        assert compare_waveforms(a, b)["y"]["max_abs"] == pytest.approx(0.0, abs=1e-15)

    def test_rel_l2(self):
        a = _wf([0, 1], y=[3.0, 4.0])
        b = _wf([0, 1], y=[3.0, 3.0])
        assert compare_waveforms(a, b)["y"]["rel_l2"] == pytest.approx(1 / 5)

    def test_disjoint(self):
        with pytest.raises(WaveformError):
            compare_waveforms(_wf([0, 1], y=[0, 0]), _wf([2, 3], y=[0, 0]))


class TestHelpers:
    def test_sample_at(self):
        wf = _wf([0, 2], y=[0.0, 4.0])
        assert sample_at(wf, [1.0], "y")[0] == 2.0

    def test_periodic_change(self):
        wf = Waveform(["y"], n_states=1)
        for k in range(41):
            t = k * 0.25
            wf.append(t, [0.0], [np.sin(2 * np.pi * t) + 1.0 - np.exp(-t)])
        pc = periodic_change(wf, 1.0)
        assert pc.shape == (10, 1)
        assert np.all(np.diff(pc[:, 0]) < 0)


class TestSvg:
    def test_panes_and_events(self):
        wf = _wf([0.0, 1.0, 2.0], a=[0, 1, 0], b=[1, 1, 2])
        wf.events = [(1.0, "1")]
        svg = to_svg(wf)
        assert svg.startswith("<svg") and svg.count("<polyline") == 2
        assert svg.count('class="event"') == 2

    def test_single_point(self):
        svg = to_svg(_wf([0.0], a=[1.0]))
        assert 'class="marker"' in svg and "<polyline" not in svg

    def test_empty(self):
        with pytest.raises(WaveformError):
            to_svg(Waveform(["a"]))
