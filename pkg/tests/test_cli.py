import json

import pytest

from ntnric.cli import main


def run(args, tmp_path, sub="out"):
    out = tmp_path / sub
    return main(args + ["--out", str(out)]), out


def test_evaluate_deterministic(tmp_path):
    a, out_a = run(["evaluate", "--policy", "always_on", "--days", "1", "--seed", "7"], tmp_path, "a")
    b, out_b = run(["evaluate", "--policy", "always_on", "--days", "1", "--seed", "7"], tmp_path, "b")
    assert a == b == 0
    assert (out_a / "evaluation.csv").read_bytes() == (out_b / "evaluation.csv").read_bytes()
    manifest = json.loads((out_a / "run_manifest.json").read_text())
    assert manifest["seed"] == 7 and len(manifest["config_sha256"]) == 64
    assert (out_a / "run_manifest.json").read_bytes() == (out_b / "run_manifest.json").read_bytes()


def test_unknown_subcommand(capsys):
    assert main(["frobnicate"]) == 1
    assert "usage" in capsys.readouterr().err


def test_unknown_flag(tmp_path):
    assert run(["simulate", "--seed", "1", "--bogus"], tmp_path)[0] == 1


def test_missing_seed(tmp_path):
    assert run(["simulate"], tmp_path)[0] == 1


@pytest.mark.parametrize("seed", ["-1", str(2**64), "abc"])
def test_bad_seed(tmp_path, seed):
    assert run(["simulate", "--seed", seed], tmp_path)[0] == 1


def test_resolution_zero(tmp_path, capsys):
    code, out = run(["coverage", "--seed", "1", "--resolution", "0"], tmp_path)
    assert code == 2
    assert "--resolution" in capsys.readouterr().err
    assert not out.exists()


def test_bad_config_file(tmp_path):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("radio:\n  unknown_knob: 3\n")
    assert run(["simulate", "--seed", "1", "--config", str(cfg)], tmp_path)[0] == 2


def test_dqn_needs_checkpoint(tmp_path):
    assert run(["simulate", "--seed", "1", "--policy", "dqn"], tmp_path)[0] == 2


def test_help_exits_zero(capsys):
    assert main(["train", "--help"]) == 0
    assert "--episodes" in capsys.readouterr().out


def test_simulate_then_replay(tmp_path):
    code, out = run(["simulate", "--seed", "3", "--days", "2", "--policy", "random"], tmp_path, "sim")
    assert code == 0
    assert {p.name for p in out.iterdir()} == {"metrics.csv", "stream.ndjson", "run_manifest.json"}
    code, rout = run(["replay", str(out / "stream.ndjson"), "--seed", "3"], tmp_path, "rep")
    assert code == 0
    assert (rout / "stream.ndjson").read_bytes() == (out / "stream.ndjson").read_bytes()
    assert (rout / "metrics.csv").read_bytes() == (out / "metrics.csv").read_bytes()


def test_replay_wrong_seed_fails(tmp_path):
    _, out = run(["simulate", "--seed", "3", "--policy", "greedy_idle"], tmp_path, "sim")
    assert run(["replay", str(out / "stream.ndjson"), "--seed", "4"], tmp_path, "rep")[0] == 3


def test_replay_malformed(tmp_path):
    bad = tmp_path / "bad.ndjson"
    bad.write_text('{"seq":1,"kind":"subscribe"\n')
    assert run(["replay", str(bad), "--seed", "1"], tmp_path)[0] == 3


def test_train_and_evaluate_dqn(tmp_path):
    code, tout = run(["train", "--seed", "2", "--episodes", "3"], tmp_path, "train")
    assert code == 0
    assert (tout / "learning_curve.csv").read_text().count("\n") == 4
    ck = str(tout / "checkpoint.txt")
    code, eout = run(["evaluate", "--seed", "2", "--days", "1", "--checkpoint", ck,
                      "--policy", "always_on,dqn"], tmp_path, "eval")
    assert code == 0
    rows = (eout / "evaluation.csv").read_text().splitlines()
    assert [r.split(",")[0] for r in rows[1:]] == ["always_on", "dqn"]
    assert "checkpoint" in json.loads((eout / "run_manifest.json").read_text())["inputs"]


def test_coverage_outputs(tmp_path):
    code, out = run(["coverage", "--seed", "0", "--resolution", "2500"], tmp_path)
    assert code == 0
    best = (out / "coverage_best_server.csv").read_text().splitlines()
    assert best[0] == "x_m,y_m,cell_id,rsrp_dbm" and len(best) == 1 + 25
    assert all((out / f"coverage_cell{k}.csv").exists() for k in range(10))


def test_coverage_with_terrain(tmp_path):
    t = tmp_path / "t.csv"
    rows = "\n".join(",".join(["0"] * 4) for _ in range(4))
    t.write_text(f"origin_x,origin_y,cell_size_m,ncols,nrows\n0,0,2500,4,4\n{rows}\n")
    code, out = run(["coverage", "--seed", "0", "--resolution", "2500", "--terrain", str(t)], tmp_path)
    assert code == 0


def test_bad_terrain(tmp_path):
    t = tmp_path / "t.csv"
    t.write_text("nonsense\n")
    assert run(["coverage", "--seed", "0", "--terrain", str(t)], tmp_path)[0] == 2
