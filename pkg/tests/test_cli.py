import csv
from pathlib import Path

import pytest

from fscbounds.cli import main

from oracles import h2

GOLDEN = Path(__file__).parent / "golden"

CASES = {
    "enumerate_3_2.csv": ["enumerate", "--nodes", "3", "--list"],
    "encoders_list.csv": ["encoders", "list"],
    "eval_trapdoor_3node.csv": ["encoders", "eval", "trapdoor_3node", "--p-range", "0.1:0.4:0.1"],
    "bounds_bfc1_markov0.csv": ["bounds", "--channel", "bfc1", "--p-range", "0.1:0.5:0.1",
                                "--graph", "markov:0", "--starts", "4"],
    "kkt_bfc2.csv": ["kkt", "--p-range", "0.72:0.78:0.02"],
    "pstar_trapdoor.csv": ["pstar", "--channel", "trapdoor"],
    "simulate_trapdoor.csv": ["simulate", "--encoder", "trapdoor_3node", "--p", "0.25",
                              "--n", "2000", "--trials", "3", "--seed", "5"],
}


@pytest.mark.parametrize("name", sorted(CASES))
def test_output_matches_golden_file(name, tmp_path):
    out = tmp_path / name
    assert main(CASES[name] + ["--out", str(out)]) == 0
    assert out.read_bytes() == (GOLDEN / name).read_bytes()


def read(path):
    return list(csv.DictReader(open(path)))


def test_single_node_bounds_are_tight(tmp_path):
    out = tmp_path / "b.csv"
    main(CASES["bounds_bfc1_markov0.csv"] + ["--out", str(out)])
    for row in read(out):
        p = float(row["p"])
        assert float(row["ub"]) == pytest.approx(1 - h2(p), abs=1e-4)
        assert float(row["lb"]) == pytest.approx(1 - h2(p), abs=1e-4)
        assert float(row["gap"]) >= -1e-6


def test_count_output(capsys):
    main(["enumerate", "--nodes", "2"])
    assert capsys.readouterr().out == "nodes,outputs,count\n2,2,5\n"


def test_pool_reports_best_bounds(tmp_path):
    out = tmp_path / "pool.csv"
    assert main(["bounds", "--channel", "trapdoor", "--p", "0.3", "--graph", "pool:2",
                 "--starts", "2", "--out", str(out)]) == 0
    rows = read(out)
    assert len(rows) == 1
    assert float(rows[0]["gap"]) >= -1e-6


def test_encoder_lower_bound_column(tmp_path):
    out = tmp_path / "ising.csv"
    main(["bounds", "--channel", "ising", "--p", "0.7", "--graph", "markov:4",
          "--encoder", "ising_6node", "--out", str(out)])
    row = read(out)[0]
    assert row["lb_graph"] == "ising_6node"
    assert 0 <= float(row["gap"]) <= 0.01


def test_invalid_graph_is_a_soft_failure(tmp_path, capsys):
    out = tmp_path / "x.csv"
    assert main(["bounds", "--channel", "trapdoor", "--p", "0.0", "--graph", "markov:0",
                 "--out", str(out)]) == 0
    assert read(out) == []
    assert "warning" in capsys.readouterr().err


def test_out_of_range_encoder_row_is_annotated(tmp_path):
    out = tmp_path / "e.csv"
    assert main(["encoders", "eval", "trapdoor_3node", "--p", "0.2", "0.7",
                 "--out", str(out)]) == 0
    rows = read(out)
    assert rows[0]["status"] == "ok"
    assert rows[1]["status"].startswith("ValidityError")


def test_simulation_of_encoder_file(tmp_path):
    enc = tmp_path / "enc.json"
    assert main(["encoders", "export", "bfc1_1node", "--p", "0.25", "--out", str(enc)]) == 0
    out = tmp_path / "sim.csv"
    trace = tmp_path / "trace.csv"
    assert main(["simulate", "--encoder-file", str(enc), "--n", "500", "--messages", "1",
                 "--transcript", str(trace), "--out", str(out)]) == 0
    row = read(out)[0]
    assert float(row["success_fraction"]) == 1.0
    assert len(read(trace)) == 500


def test_figures_are_written(tmp_path):
    png = tmp_path / "rates.png"
    assert main(["encoders", "eval", "bfc1_2node", "--p-range", "0.6:0.8:0.1",
                 "--plot", str(png), "--out", str(tmp_path / "r.csv")]) == 0
    assert png.stat().st_size > 1000
    sim_png = tmp_path / "sim.png"
    main(["simulate", "--encoder", "bfc1_1node", "--p", "0.25", "--n", "300",
          "--plot", str(sim_png), "--out", str(tmp_path / "s.csv")])
    assert sim_png.stat().st_size > 1000


def test_hard_errors_exit_nonzero(tmp_path, capsys):
    assert main(["simulate", "--encoder-file", str(tmp_path / "missing.json")]) == 1
    bad = tmp_path / "bad.json"
    bad.write_text('{"qgraph": {"transition": [[0, 0]]}, "policy": [[[0.9, 0.1]], [[0.5, 0.5]]],'
                   ' "channel": ' + open(GOLDEN.parent / "data" / "trapdoor_03.json").read() + "}")
    assert main(["simulate", "--encoder-file", str(bad)]) == 1
    assert "error" in capsys.readouterr().err


@pytest.mark.parametrize("argv", [
    ["bounds", "--channel", "nope", "--p", "0.1"],
    ["bounds", "--channel", "bfc1"],
    ["bounds", "--channel", "bfc1", "--p", "1.5"],
    ["bounds", "--channel", "bfc1", "--p-range", "0.5:0.1:0.1"],
    ["kkt", "--channel", "ising", "--p", "0.7"],
])
def test_usage_errors(argv):
    with pytest.raises(SystemExit) as info:
        main(argv)
    assert info.value.code == 2


def test_channel_file_source(tmp_path):
    out = tmp_path / "f.csv"
    path = GOLDEN.parent / "data" / "trapdoor_03.json"
    assert main(["bounds", "--channel", f"file:{path}", "--graph", "markov:1", "--bound", "ub",
                 "--out", str(out)]) == 0
    row = read(out)[0]
    assert row["p"] == ""
    assert float(row["ub"]) > 0
