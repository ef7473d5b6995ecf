import csv
import io
import json
import math

import pytest

from masep.cli import EXIT_CAPACITY, EXIT_FAIL, EXIT_MISSING, EXIT_OK, EXIT_USAGE, main


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def expand(doc):
    vals = []
    for re, im, m in doc["eigenvalues"]:
        vals += [complex(re, im)] * m
    return vals


def test_spectrum_two_two_block(capsys):
    code, out, _ = run(capsys, "spectrum", "--L", "4", "--sector", "2,2", "--p", "2/3", "--q", "1/3")
    assert code == EXIT_OK
    doc = json.loads(out)
    assert doc["dimension"] == 6
    want = sorted([0, -1, -1, -3, -4 / 3, -5 / 3], reverse=True)
    assert [v.real for v in expand(doc)] == pytest.approx(want, abs=1e-12)


def test_spectrum_rounded_rates(capsys):
    code, out, _ = run(capsys, "spectrum", "--L", "4", "--sector", "2,2", "--p", "0.6667", "--q", "0.3333")
    vals = [v.real for v in expand(json.loads(out))]
    assert code == EXIT_OK and len(vals) == 6
    assert vals == pytest.approx(sorted([0, -1, -1, -3, -4 / 3, -5 / 3], reverse=True), abs=1e-3)


def test_spectrum_single_site(capsys):
    code, out, _ = run(capsys, "spectrum", "--L", "1", "--sector", "1")
    assert code == EXIT_OK
    assert json.loads(out)["eigenvalues"] == [[0.0, 0.0, 1]]


def test_spectrum_next_leading(capsys):
    code, out, _ = run(capsys, "spectrum", "--L", "7", "--sector", "2,1,3,1", "--p", "0.8", "--q", "0.2",
                       "--next-leading")
    doc = json.loads(out)
    assert code == EXIT_OK
    assert doc["dimension"] == 420 and sum(m for *_, m in doc["eigenvalues"]) == 420
    assert [d["split"] for d in doc["next_leading"]] == [1, 2, 3]


def test_spectrum_csv_and_file(capsys, tmp_path):
    target = tmp_path / "spec.csv"
    code, out, _ = run(capsys, "spectrum", "--sector", "1,3", "--p", "2/3", "--q", "1/3",
                       "--format", "csv", "-o", str(target))
    assert code == EXIT_OK and out == ""
    rows = list(csv.DictReader(io.StringIO(target.read_text())))
    assert len(rows) == 4 and float(rows[0]["re"]) == 0.0


def test_spectrum_is_deterministic(capsys):
    argv = ("spectrum", "--sector", "1,2,2", "--p", "0.7", "--q", "0.2")
    assert run(capsys, *argv)[1] == run(capsys, *argv)[1]


def test_genuine_dimensions(capsys):
    code, out, _ = run(capsys, "genuine", "--sector", "1,2,1,1")
    doc = json.loads(out)
    assert code == EXIT_OK and doc["genuine_dimension"] == 9 and doc["dimension"] == 60
    code, out, _ = run(capsys, "genuine", "--sector", "2,2", "--p", "2/3", "--q", "1/3", "--method", "mobius")
    assert len(expand(json.loads(out))) == 5


def test_duality_command(capsys):
    code, out, _ = run(capsys, "duality", "--L", "4", "--sector", "1,3", "--p", "0.8", "--q", "0.2")
    assert code == EXIT_OK


@pytest.mark.parametrize("suite,extra", [("duality", []), ("inclusion", ["--L", "5"]), ("ybe", []),
                                         ("bethe-fixtures", []), ("stationary", []), ("gap-conjecture", [])])
def test_verify_suites_pass(capsys, suite, extra):
    code, out, _ = run(capsys, "verify", "--suite", suite, *extra)
    doc = json.loads(out)
    assert code == EXIT_OK and doc["ok"] and doc["n_checks"] > 0


def test_verify_inclusion_counts_pairs(capsys):
    _, out, _ = run(capsys, "verify", "--suite", "inclusion", "--L", "5")
    # strictly nested subset pairs of a 4-element set
    assert json.loads(out)["n_checks"] == 3 ** 4 - 2 ** 4


def test_verify_fixture_file(capsys, tmp_path):
    from masep.bethe import reference_fixture_path
    src = json.loads(reference_fixture_path().read_text())
    path = tmp_path / "roots.json"
    path.write_text(json.dumps(src))
    assert run(capsys, "verify", "--suite", "bethe-fixtures", "--fixtures", str(path))[0] == EXIT_OK
    src["roots"][8]["levels"][0][0][0] += 0.01
    path.write_text(json.dumps(src))
    code, _, err = run(capsys, "bethe", "verify", "--fixtures", str(path))
    assert code == EXIT_FAIL and "failed" in err


def test_verify_workers_match_serial(capsys):
    a = run(capsys, "verify", "--suite", "duality", "--L", "4")[1]
    b = run(capsys, "verify", "--suite", "duality", "--L", "4", "--workers", "2")[1]
    assert a == b


def test_missing_fixture_file(capsys, tmp_path):
    code, _, err = run(capsys, "bethe", "verify", "--fixtures", str(tmp_path / "nope.json"))
    assert code == EXIT_MISSING


def test_capacity_exit(capsys):
    code, _, err = run(capsys, "spectrum", "--sector", "2,1,3,1", "--p", "0.8", "--q", "0.2", "--capacity", "100")
    assert code == EXIT_CAPACITY


def test_capacity_needs_flag(capsys):
    code, _, _ = run(capsys, "spectrum", "--sector", "2,2", "--p", "0.8", "--q", "0.2", "--capacity", "9000")
    assert code == EXIT_USAGE


@pytest.mark.parametrize("argv", [
    ["spectrum", "--sector", "2,0", "--p", "1", "--q", "0"],
    ["spectrum", "--sector", "2,2", "--p", "-1", "--q", "0"],
    ["spectrum", "--sector", "2,2", "--p", "0", "--q", "0"],
    ["spectrum", "--sector", "2,2"],
    ["spectrum", "--L", "5", "--sector", "2,2", "--p", "1", "--q", "0"],
    ["scan", "--Lmin", "64", "--Lmax", "32", "--rho", "1/2", "--p", "0.8", "--q", "0.2"],
    ["bethe", "solve1", "--L", "8", "--n1", "2", "--p", "0.8", "--q", "0.2", "--I", "0,1"],
    ["nonsense"],
])
def test_usage_errors(capsys, argv):
    assert run(capsys, *argv)[0] == EXIT_USAGE


def test_scan_ssep(capsys, tmp_path):
    fit_path = tmp_path / "fit.json"
    code, out, _ = run(capsys, "scan", "--Lmin", "16", "--Lmax", "256", "--rho", "1/2", "--p", "0.5", "--q", "0.5",
                       "--fit-output", str(fit_path))
    assert code == EXIT_OK
    rows = list(csv.DictReader(io.StringIO(out)))
    assert [int(r["L"]) for r in rows] == [16, 32, 64, 128, 256]
    for r in rows:
        assert float(r["reE"]) == pytest.approx(-2 * math.sin(math.pi / int(r["L"])) ** 2, abs=1e-12)
    assert json.loads(fit_path.read_text())["fit"]["z"] == pytest.approx(2, abs=1e-3)


def test_scan_skips_inadmissible(capsys):
    code, out, err = run(capsys, "scan", "--Lmin", "6", "--Lmax", "12", "--step", "2", "--rho", "1/4",
                         "--p", "0.8", "--q", "0.2", "--method", "diagonalization")
    assert code == EXIT_OK
    assert [int(r["L"]) for r in csv.DictReader(io.StringIO(out))] == [8, 12]
    assert "skipped" in err


def test_solve1(capsys):
    code, out, _ = run(capsys, "bethe", "solve1", "--L", "4", "--n1", "2", "--p", "2/3", "--q", "1/3")
    doc = json.loads(out)
    assert code == EXIT_OK
    assert doc["energy"] == pytest.approx([-1.0, 0.0], abs=1e-10)
    assert doc["quantum_numbers"] == [-0.5, 1.5]


def test_hasse(capsys):
    code, out, _ = run(capsys, "hasse", "--L", "4")
    doc = json.loads(out)
    assert len(doc["nodes"]) == 8 and len(doc["edges"]) == 12
    code, out, _ = run(capsys, "hasse", "--L", "2", "--format", "csv")
    assert out.splitlines() == ["lower,upper", '"2","1,1"']


def test_stationary_command(capsys):
    code, out, _ = run(capsys, "stationary", "--sector", "1,1,1", "--p", "0.7", "--q", "0.2")
    probs = dict(json.loads(out)["probabilities"])
    a, b = 2 * 0.7 + 0.2, 0.7 + 2 * 0.2
    assert probs["123"] == pytest.approx(a / (3 * a + 3 * b))
    assert probs["132"] == pytest.approx(b / (3 * a + 3 * b))
