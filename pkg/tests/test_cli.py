import os

import pytest

from rknlab.cli import main

# Small enough to keep every CLI test fast.
TINY = ["--override", "dataset.train=4", "--override", "dataset.val=2",
        "--override", "dataset.test=3", "--override", "dataset.T=8",
        "--override", "rkn.fc_in=[4]", "--override", "rkn.gru=[4]",
        "--override", "rkn.fc_out=[4]",
        "--override", "training.epochs=2",
        "--override", "training.batch_size=2"]


@pytest.fixture(scope="module")
def dataset_dir(tmp_path_factory):
    path = str(tmp_path_factory.mktemp("cli") / "ds")
    assert main(["generate", "--out", path] + TINY) == 0
    return path


@pytest.fixture(scope="module")
def checkpoint(dataset_dir, tmp_path_factory):
    path = str(tmp_path_factory.mktemp("cli") / "model.ckpt")
    assert main(["train", "--dataset", dataset_dir, "--out", path]
                + TINY) == 0
    return path


def test_generate_writes_dataset(dataset_dir, capsys):
    for name in ("meta", "train.csv", "val.csv", "test.csv", "fingerprint"):
        assert os.path.exists(os.path.join(dataset_dir, name))


def test_generate_deterministic(tmp_path):
    a, b = str(tmp_path / "a"), str(tmp_path / "b")
    assert main(["generate", "--out", a] + TINY) == 0
    assert main(["generate", "--out", b] + TINY) == 0
    for name in ("meta", "train.csv", "val.csv", "test.csv", "fingerprint"):
        with open(os.path.join(a, name), "rb") as fh:
            left = fh.read()
        with open(os.path.join(b, name), "rb") as fh:
            right = fh.read()
        assert left == right, name


def test_generate_rejects_bad_config(tmp_path):
    code = main(["generate", "--out", str(tmp_path / "x"),
                 "--override", "noise.p=1.5"])
    assert code == 2
    code = main(["generate", "--out", str(tmp_path / "x"),
                 "--override", "nosuch.key=1"])
    assert code == 2


def test_train_writes_checkpoint(checkpoint):
    assert os.path.exists(checkpoint)
    assert os.path.exists(checkpoint + ".history.csv")


def test_train_rejects_mismatched_config(dataset_dir, tmp_path):
    # Same dataset dir but a config that asks for different sizes.
    code = main(["train", "--dataset", dataset_dir,
                 "--out", str(tmp_path / "m.ckpt")] + TINY
                + ["--override", "dataset.train=5"])
    assert code == 4


def test_train_rejects_tampered_dataset(tmp_path):
    path = str(tmp_path / "ds")
    assert main(["generate", "--out", path] + TINY) == 0
    csv_path = os.path.join(path, "val.csv")
    with open(csv_path) as fh:
        text = fh.read()
    with open(csv_path, "w") as fh:
        fh.write(text + "# tampered\n")
    code = main(["train", "--dataset", path,
                 "--out", str(tmp_path / "m.ckpt")] + TINY)
    assert code == 4


def test_eval_baseline(dataset_dir, tmp_path, capsys):
    out = str(tmp_path / "eval")
    assert main(["eval", "okf", "--dataset", dataset_dir, "--out", out]) == 0
    captured = capsys.readouterr().out
    assert "okf" in captured and "mse" in captured
    assert os.path.exists(os.path.join(out, "report_okf.csv"))
    assert os.path.exists(os.path.join(out, "consistency_okf.csv"))
    assert os.path.exists(os.path.join(out, "gain_trace_okf.csv"))
    svgs = [n for n in os.listdir(out) if n.endswith(".svg")]
    assert svgs, "figures should be rendered next to the CSVs"


def test_eval_no_plots(dataset_dir, tmp_path):
    out = str(tmp_path / "eval")
    assert main(["eval", "sokf", "--dataset", dataset_dir, "--out", out,
                 "--no-plots"]) == 0
    assert not [n for n in os.listdir(out) if n.endswith(".svg")]


def test_eval_checkpoint_and_split(dataset_dir, checkpoint, tmp_path):
    out = str(tmp_path / "eval")
    assert main(["eval", checkpoint, "--dataset", dataset_dir,
                 "--out", out, "--split", "val", "--no-plots"]) == 0
    assert os.path.exists(os.path.join(out, "report_rkn.csv"))


def test_eval_deterministic(dataset_dir, tmp_path):
    a, b = str(tmp_path / "a"), str(tmp_path / "b")
    for out in (a, b):
        assert main(["eval", "okf", "--dataset", dataset_dir, "--out", out,
                     "--no-plots"]) == 0
    for name in ("report_okf.csv", "consistency_okf.csv",
                 "gain_trace_okf.csv"):
        with open(os.path.join(a, name), "rb") as fh:
            left = fh.read()
        with open(os.path.join(b, name), "rb") as fh:
            right = fh.read()
        assert left == right, name


def test_eval_missing_checkpoint(dataset_dir, tmp_path):
    code = main(["eval", str(tmp_path / "nope.ckpt"),
                 "--dataset", dataset_dir, "--out", str(tmp_path / "out")])
    assert code == 4


def test_eval_missing_dataset(tmp_path):
    code = main(["eval", "okf", "--dataset", str(tmp_path / "nope"),
                 "--out", str(tmp_path / "out")])
    assert code == 4


def test_resume_training(dataset_dir, checkpoint, tmp_path):
    out = str(tmp_path / "resumed.ckpt")
    assert main(["train", "--dataset", dataset_dir, "--out", out,
                 "--resume", checkpoint] + TINY) == 0
    from rknlab.training import load_checkpoint
    _, _, header = load_checkpoint(out)
    epochs = [h["epoch"] for h in header["history"]]
    assert epochs == sorted(epochs)
    assert len(epochs) == 4  # 2 original + 2 resumed


def test_sweep_and_report(tmp_path, capsys):
    out = str(tmp_path / "sweep")
    assert main(["sweep", "--nu", "20,40", "--out", out] + TINY) == 0
    report_csv = os.path.join(out, "report.csv")
    assert os.path.exists(report_csv)
    with open(report_csv) as fh:
        lines = fh.read().splitlines()
    assert len(lines) == 1 + 2 * 2  # two baselines x two levels
    assert os.path.exists(os.path.join(out, "mse_vs_nu.svg"))
    capsys.readouterr()

    assert main(["report", out]) == 0
    table = capsys.readouterr().out
    assert "okf" in table and "sokf" in table and "mse_db" in table


def test_sweep_rejects_bad_levels(tmp_path):
    assert main(["sweep", "--nu", "abc", "--out", str(tmp_path / "s")]) == 2
    assert main(["sweep", "--nu", ",", "--out", str(tmp_path / "s")]) == 2


def test_report_empty_dir(tmp_path):
    assert main(["report", str(tmp_path)]) == 4


def test_help_and_usage():
    with pytest.raises(SystemExit) as exc:
        main(["--help"])
    assert exc.value.code == 0
    with pytest.raises(SystemExit):
        main([])
