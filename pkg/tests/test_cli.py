import csv
import json

import numpy as np
import pytest

from fockcert.certifier import InterferencePattern, certifier_value
from fockcert.cli import main, parse_noise, parse_range, parse_target
from fockcert.core import PhysicalParams, PulseSequence


def rows(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def test_parsers():
    t = parse_target("1, 1, 1")
    assert np.allclose(np.abs(t.amplitudes) ** 2, 1 / 3)
    assert parse_target("0,1,1i").amplitudes[2] == pytest.approx(1j / np.sqrt(2))
    params, carrier = parse_noise("thermal:0.05,carrier", PhysicalParams())
    assert params.thermal_nbar == 0.05 and carrier
    params, _ = parse_noise("detuning:-1000", PhysicalParams())
    assert params.sideband_detuning == -1000
    with pytest.raises(Exception):
        parse_noise("wind", PhysicalParams())
    assert np.allclose(parse_range("0:1:3"), [0, 0.5, 1])
    assert np.allclose(parse_range("-1000,0"), [-1000, 0])


def test_synthesize_and_map(tmp_path):
    out = tmp_path / "creation.json"
    assert main(["synthesize", "--target", "1,1,1", "-o", str(out)]) == 0
    seq = PulseSequence.from_json(out.read_text())
    assert [p.transition.value for p in seq] == ["carrier", "red", "carrier", "red"]
    out = tmp_path / "mapping.json"
    main(["map", "--target", "0,1,1", "--template", "rcrcr", "--restarts", "64", "-o", str(out)])
    assert len(PulseSequence.from_json(out.read_text())) == 5


def test_pattern_then_certify(tmp_path):
    pat = tmp_path / "pattern.csv"
    main(["pattern", "--target", "1,1,1", "-o", str(pat)])
    table = rows(pat)
    assert list(table[0]) == ["phase_rad", "probability", "weight"]
    assert len(table) == 31
    rep = tmp_path / "report.json"
    main(["certify", "--pattern", str(pat), "-o", str(rep)])
    doc = json.loads(rep.read_text())
    assert doc["c"] == pytest.approx(47 / 27, abs=1e-9)
    assert doc["certified_level"] == 3


def test_simulated_certification_round_trip(tmp_path):
    rec, rep = tmp_path / "record.csv", tmp_path / "report.json"
    main(["certify", "--target", "1,1,1", "--seed", "3", "--record-out", str(rec),
          "-o", str(rep)])
    doc = json.loads(rep.read_text())
    assert set(doc) >= {"m1", "m3", "c", "sigma", "certified_level", "thresholds", "c_naive"}
    again = tmp_path / "again.json"
    main(["certify", "--record", str(rec), "-o", str(again)])
    assert json.loads(again.read_text())["c"] == pytest.approx(doc["c"], rel=1e-12)


def test_noise_flag_changes_the_pattern(tmp_path):
    out = tmp_path / "p.csv"
    main(["pattern", "--noise", "thermal:0.02", "-o", str(out)])
    pat = InterferencePattern.from_csv(out)
    assert certifier_value(pat) == pytest.approx(1.65, abs=0.02)


def test_thresholds(tmp_path):
    out = tmp_path / "t.csv"
    main(["thresholds", "--dims", "2", "3", "--ks", "1", "2", "--restarts", "4", "-o", str(out)])
    table = rows(out)
    assert [(r["dim"], r["k"]) for r in table] == [("2", "1"), ("2", "2"), ("3", "1"), ("3", "2")]
    assert float(table[1]["optimum"]) == pytest.approx(1.25, abs=1e-6)


def test_probe_then_fit(tmp_path):
    data, fit = tmp_path / "probe.csv", tmp_path / "fit.json"
    main(["probe", "--populations", "1/3,1/3,1/3", "--times", "0:500e-6:201", "--seed", "1",
          "--dephasing", "50", "-o", str(data)])
    assert list(rows(data)[0]) == ["time_s", "successes", "shots", "probability"]
    main(["fit", str(data), "--bootstrap", "20", "-o", str(fit)])
    doc = json.loads(fit.read_text())
    assert doc["converged"]
    assert np.allclose(doc["populations"], 1 / 3, atol=0.01)
    assert set(doc["bounds"]) >= {"P0", "P1", "P2", "sideband_rabi"}


def test_monte_carlo(tmp_path):
    out, summary = tmp_path / "mc.csv", tmp_path / "mc.json"
    main(["monte-carlo", "--shots", "100", "--runs", "10000", "--summary", str(summary),
          "-o", str(out)])
    assert len(rows(out)) == 100
    doc = json.loads(summary.read_text())
    assert doc["c_exact"] == pytest.approx(47 / 27, abs=1e-9)
    assert doc["naive_mean"] > doc["unbiased_mean"]


def test_sweep_accepts_negative_detunings(tmp_path):
    out = tmp_path / "sweep.csv"
    main(["sweep", "--deltas=-500,0,500", "-o", str(out)])
    table = rows(out)
    assert [float(r["delta_hz"]) for r in table] == [-500, 0, 500]
    c = [float(r["c"]) for r in table]
    assert c[1] == pytest.approx(47 / 27, abs=1e-9)
    assert c[0] < c[1] and c[2] < c[1]


def test_output_is_deterministic(tmp_path):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    for path in (a, b):
        main(["certify", "--seed", "9", "-o", str(path)])
    assert a.read_bytes() == b.read_bytes()


def test_unknown_command_exits():
    with pytest.raises(SystemExit):
        main(["bake"])
