import numpy as np
import pytest

from pointvst import cli
from pointvst.data import tree_digest
from pointvst.training import load_checkpoint

COMMANDS = ["gen-data", "render-views", "pretrain", "probe", "visibility-eval", "gradcheck"]


@pytest.mark.parametrize("command", COMMANDS)
def test_help(command, capsys):
    with pytest.raises(SystemExit) as exc:
        cli.main([command, "--help"])
    assert exc.value.code == 0
    assert "--" in capsys.readouterr().out


def test_pretrain_help_shows_defaults(capsys):
    with pytest.raises(SystemExit):
        cli.main(["pretrain", "--help"])
    out = capsys.readouterr().out
    assert "(default: 30)" in out and "(default: avs)" in out


def test_usage_errors(capsys, tmp_path):
    with pytest.raises(SystemExit) as exc:
        cli.main(["frobnicate"])
    assert exc.value.code == 64
    with pytest.raises(SystemExit) as exc:
        cli.main(["pretrain", "--pooling", "median"])
    assert exc.value.code == 64
    assert cli.main(["pretrain"]) == 64  # no --out
    cfg = tmp_path / "run.cfg"
    cfg.write_text("epochs = 2\ncolour = blue\n")
    assert cli.main(["pretrain", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 64
    assert "unknown key" in capsys.readouterr().err


def test_config_precedence(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# desk run\nepochs = 3\nlr = 0.01\nweight-depth = 2\n")
    args = cli.build_parser().parse_args(["pretrain", "--config", str(cfg), "--epochs", "5"])
    s = cli.resolve_settings(args, args.config)
    assert s["epochs"] == 5 and s["lr"] == 0.01 and s["weight_depth"] == 2.0 and s["seed"] == 7
    with pytest.raises(cli.UsageError):
        cli.parse_config_text("epochs = three\n")
    with pytest.raises(cli.UsageError):
        cli.parse_config_text("epochs\n")


def test_missing_inputs_exit_2(tmp_path):
    assert cli.main(["render-views", "--data", str(tmp_path / "nope"), "--out", str(tmp_path / "c")]) == 2
    assert cli.main(["visibility-eval", "--checkpoint", str(tmp_path / "x.pvst"), "--data", str(tmp_path),
                     "--cache", str(tmp_path / "c")]) == 2


def test_gen_data_idempotent(tmp_path, capsys):
    for d in ("a", "b"):
        assert cli.main(["gen-data", "--out", str(tmp_path / d), "--per-class", "1", "--points", "32", "--seed", "5"]) == 0
    assert tree_digest(tmp_path / "a") == tree_digest(tmp_path / "b")
    assert "wrote 5 clouds" in capsys.readouterr().out


def test_render_views(tmp_path):
    cli.main(["gen-data", "--out", str(tmp_path / "d"), "--per-class", "1", "--points", "64"])
    assert cli.main(["render-views", "--data", str(tmp_path / "d"), "--out", str(tmp_path / "c"),
                     "--views", "1", "--image-size", "64"]) == 0
    assert len(list((tmp_path / "c" / "images").glob("*.pgm"))) == 15


def test_zero_epochs_writes_initialization(tmp_path):
    out = tmp_path / "run"
    assert cli.main(["pretrain", "--out", str(out), "--epochs", "0", "--seed", "3"]) == 0
    state = load_checkpoint(out / cli.CHECKPOINT_NAME)
    assert state.epoch == 0 and state.config.seed == 3
    assert (out / cli.LOSS_LOG_NAME).read_text() == ""


def test_pretrain_resume_and_evaluate(tiny_dataset, tmp_path, capsys):
    root, _, _ = tiny_dataset
    common = ["--data", str(root / "data"), "--cache", str(root / "cache"), "--views-per-cloud", "2", "--batch-size", "5"]
    assert cli.main(["pretrain", "--out", str(tmp_path / "a"), "--epochs", "1", *common]) == 0
    assert cli.main(["pretrain", "--out", str(tmp_path / "b"), "--epochs", "2", "--resume",
                     str(tmp_path / "a" / cli.CHECKPOINT_NAME), *common]) == 0
    assert cli.main(["pretrain", "--out", str(tmp_path / "c"), "--epochs", "2", *common]) == 0
    b, c = (load_checkpoint(tmp_path / d / cli.CHECKPOINT_NAME) for d in "bc")
    # the runs differ only in their output directory
    assert all(b.params[k].data.tobytes() == c.params[k].data.tobytes() for k in c.params)
    assert b.history == c.history and b.rng.bit_generator.state == c.rng.bit_generator.state
    assert len((tmp_path / "b" / cli.LOSS_LOG_NAME).read_text().splitlines()) == 2
    capsys.readouterr()
    assert cli.main(["visibility-eval", "--checkpoint", str(tmp_path / "c" / cli.CHECKPOINT_NAME),
                     "--data", str(root / "data"), "--cache", str(root / "cache"), "--thresholds", "0.4,0.5"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert [ln.split()[0] for ln in lines] == ["thr=0.40", "thr=0.50"]


def test_probe_random_init(tiny_dataset, tmp_path, capsys):
    root, _, _ = tiny_dataset
    conf = tmp_path / "conf.csv"
    args = ["probe", "--train", str(root / "data"), "--test", str(root / "data"), "--probe-epochs", "50",
            "--repeats", "3", "--confusion", str(conf)]
    assert cli.main(args) == 0
    out = capsys.readouterr().out.splitlines()
    assert out[-1].startswith("OAcc=") and 0.0 <= float(out[-1][5:]) <= 1.0
    m = np.loadtxt(conf, delimiter=",")
    assert m.shape == (5, 5) and m.sum() == 5


def test_nan_abort_exit_3(tiny_dataset, tmp_path):
    root, _, _ = tiny_dataset
    common = ["--data", str(root / "data"), "--cache", str(root / "cache"), "--views-per-cloud", "2"]
    assert cli.main(["pretrain", "--out", str(tmp_path / "n"), "--epochs", "3", "--lr", "1e300", *common]) == 3


def test_gradcheck_command(capsys):
    assert cli.main(["gradcheck", "--seeds", "1", "--max-entries", "4"]) == 0
    assert "checks passed" in capsys.readouterr().out
