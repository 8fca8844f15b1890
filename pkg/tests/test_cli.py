import json

from mlah import cli


def write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


TINY = ("[run]\niterations = 1\neval_episodes = 1\n[ppo]\nsteps_per_iteration = 64\n"
        "epochs = 1\nminibatch_size = 32\n[env]\nmax_episode_steps = 50\n[mlah]\nhidden = 8, 8\n")


def parse(out):
    return dict(line.split("\t", 1) for line in out.strip().splitlines())


def test_train_then_eval(tmp_path, capsys):
    cfg = write(tmp_path, "t.cfg", TINY)
    assert cli.main(["train", "--config", cfg, "--seed", "3", "--output-dir",
                     str(tmp_path / "out")]) == cli.EXIT_OK
    res = parse(capsys.readouterr().out)
    assert res["seed"] == "3" and res["iterations"] == "1"
    assert cli.main(["eval", "--checkpoint", res["checkpoint"], "--episodes", "2"]) == 0
    ev = parse(capsys.readouterr().out)
    assert ev["episodes"] == "2" and float(ev["mean_return"]) >= 1


def test_config_error_exit_code(tmp_path):
    bad = write(tmp_path, "b.cfg", "[ppo]\nclip = 0.1\n")
    assert cli.main(["train", "--config", bad]) == cli.EXIT_CONFIG
    assert cli.main(["train", "--config", str(tmp_path / "missing.cfg")]) == cli.EXIT_CONFIG
    assert cli.main(["eval", "--checkpoint", str(tmp_path / "none.npz")]) == cli.EXIT_CONFIG


def test_numerical_failure_exit_code(tmp_path):
    cfg = write(tmp_path, "n.cfg", TINY + "[ppo]\npolicy_lr = inf\nvalue_lr = inf\n")
    assert cli.main(["train", "--config", cfg, "--output-dir", str(tmp_path)]) == cli.EXIT_NUMERIC


def test_analyze_outputs(tmp_path, capsys):
    params = write(tmp_path, "a.cfg", "m = 0.8\nn = 0.2\nv0 = 1\nv1 = 0.5\n")
    assert cli.main(["analyze", "--params", params]) == 0
    res = parse(capsys.readouterr().out)
    assert float(res["p0"]) == 0.5 and abs(float(res["p1"]) - 0.5) < 1e-12
    assert cli.main(["analyze", "--params", params, "--format", "json"]) == 0
    assert json.loads(capsys.readouterr().out)["p0"] == 0.5
    assert cli.main(["analyze", "--params", params, "--format", "csv"]) == 0
    header, row = capsys.readouterr().out.strip().splitlines()
    assert dict(zip(header.split(","), row.split(",")))["p0"] == "0.5"
    degenerate = write(tmp_path, "d.cfg", "m = 1\nn = 0\n")
    assert cli.main(["analyze", "--params", degenerate]) == cli.EXIT_CONFIG


def test_sweep_and_emit_plots(tmp_path, capsys):
    grid = write(tmp_path, "g.cfg", TINY + "[run]\nseeds = 0\n[grid]\nppo.clip_eps = 0.1, 0.3\n")
    assert cli.main(["sweep", "--grid", grid, "--output-dir", str(tmp_path / "sw")]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0].startswith("point\tseed") and len(lines) == 3
    log = tmp_path / "sw" / "point001" / "mlah_seed0.csv"
    assert cli.main(["emit-plots", "--log", str(log)]) == 0
    assert "summary" in parse(capsys.readouterr().out)
