from __future__ import annotations

import json

from dynmatch import cli, data


def test_gen_validate_replay_roundtrip(tmp_path, capsys):
    out = tmp_path / "inst.json"
    assert cli.main([
        "gen", str(out), "--seed", "4", "--affiliates", "5",
        "--refugees", "90", "--tightness", "0.9", "--history-cases", "30",
    ]) == 0
    assert out.exists()
    assert cli.main(["validate", str(out)]) == 0

    csv_path = tmp_path / "replay.csv"
    summary_path = tmp_path / "summary.json"
    assert cli.main([
        "replay", str(out), "--policy", "greedy", "--mode", "final",
        "--arrivals", "known_n", "--csv", str(csv_path), "--summary", str(summary_path),
    ]) == 0
    doc = json.loads(summary_path.read_text())
    assert doc["policy"] == "greedy"
    assert csv_path.read_text().startswith("arrival_index,")


def test_validate_reports_broken_file(tmp_path, capsys):
    out = tmp_path / "inst.json"
    cli.main(["gen", str(out), "--seed", "4", "--affiliates", "4", "--refugees", "60"])
    doc = json.loads(out.read_text())
    doc["cases"][0]["scores"][list(doc["initial_caps"])[0]] = "7.5"  # out of range
    out.write_text(json.dumps(doc))
    assert cli.main(["validate", str(out)]) == 1


def test_plot_subcommand_writes_svgs(tmp_path):
    out = tmp_path / "inst.json"
    cli.main(["gen", str(out), "--seed", "6", "--affiliates", "4", "--refugees", "70",
              "--history-cases", "25"])
    figdir = tmp_path / "figs"
    assert cli.main([
        "plot", str(out), str(figdir), "--policies", "greedy", "hindsight",
        "--arrivals", "known_n", "--smooth", "10",
    ]) == 0
    assert (figdir / "employment_bars.svg").exists()
    assert (figdir / "match_score.svg").exists()
    assert (figdir / "priced_capacity.svg").exists()
