import csv
import json
import subprocess
import sys

import pytest

from elai.cli import main
from elai.pipeline import PipelineConfig

FAST = {"train": {"learning_rate": 0.01, "epochs": 60}}


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture
def data(tmp_path, capsys):
    path = tmp_path / "d.csv"
    code, _, _ = run(capsys, "gen-data", "--normal", 100, "--attack", 100, "--dim", 6, "--seed", 1, "--out", path)
    assert code == 0
    return path


@pytest.fixture
def fast_config(tmp_path):
    path = tmp_path / "fast.json"
    path.write_text(json.dumps(FAST))
    return path


@pytest.fixture
def trained(tmp_path, capsys, data, fast_config):
    model = tmp_path / "m.json"
    code, out, _ = run(capsys, "train", "--data", data, "--config", fast_config, "--out-model", model)
    assert code == 0
    return model, json.loads(out)


def test_gen_data(tmp_path, capsys, data):
    rows = list(csv.reader(open(data)))
    assert len(rows) == 201
    assert rows[0][-2:] == ["label", "category"]
    again = tmp_path / "again.csv"
    run(capsys, "gen-data", "--normal", 100, "--attack", 100, "--dim", 6, "--seed", 1, "--out", again)
    assert again.read_bytes() == data.read_bytes()


def test_gen_data_rejects_zero_dim(tmp_path, capsys):
    with pytest.raises(SystemExit) as exc:
        main(["gen-data", "--dim", "0", "--out", str(tmp_path / "x.csv")])
    assert exc.value.code == 2
    assert "--dim" in capsys.readouterr().err


def test_gen_data_io_failure(tmp_path, capsys):
    code, _, err = run(capsys, "gen-data", "--out", tmp_path / "missing" / "d.csv")
    assert code == 3 and "error" in err


def test_init_config_round_trips(tmp_path, capsys):
    code, out, _ = run(capsys, "init-config")
    assert code == 0
    assert PipelineConfig.from_dict(json.loads(out)) == PipelineConfig()
    path = tmp_path / "c.json"
    run(capsys, "init-config", "--out", path)
    assert path.read_text() == out


def test_train_with_defaults_reduces_loss(tmp_path, capsys, data):
    model = tmp_path / "m.json"
    code, out, _ = run(capsys, "train", "--data", data, "--out-model", model)
    assert code == 0 and model.exists()
    report = json.loads(out)
    assert report["final_loss"] < report["initial_loss"]
    assert len(report["history"]["train_loss"]) == 50


def test_train_report_schema(trained):
    _, report = trained
    assert set(report) == {
        "config", "dataset", "evaluation", "final_loss", "history", "initial_loss",
        "model_size_bytes", "param_count", "ranking", "tool_version",
    }
    assert report["config"]["train"]["epochs"] == 60
    assert len(report["ranking"]["entries"]) == 6


def test_train_errors(tmp_path, capsys, data):
    bad = tmp_path / "nolabel.csv"
    bad.write_text("a,b\n1,2\n3,4\n")
    code, _, err = run(capsys, "train", "--data", bad, "--out-model", tmp_path / "m.json")
    assert code == 3 and "label" in err
    cfg = tmp_path / "bad.json"
    cfg.write_text(json.dumps({"train": {"batch_size": 0}}))
    code, _, _ = run(capsys, "train", "--data", data, "--config", cfg, "--out-model", tmp_path / "m.json")
    assert code == 2
    cfg.write_text(json.dumps({"features": {"k": 9}}))
    code, _, _ = run(capsys, "train", "--data", data, "--config", cfg, "--out-model", tmp_path / "m.json")
    assert code == 2
    cfg.write_text(json.dumps({"learning_rate": 1}))
    code, _, _ = run(capsys, "train", "--data", data, "--config", cfg, "--out-model", tmp_path / "m.json")
    assert code == 2


def test_train_non_finite_exits_4(tmp_path, capsys):
    big = tmp_path / "big.csv"
    big.write_text("a,b,label\n" + "".join(f"{(-1) ** i * 1e308},-1e308,{i % 2}\n" for i in range(10)))
    cfg = tmp_path / "raw.json"
    cfg.write_text(json.dumps({"normalize": False, "features": {"mode": "ig-topk", "k": 2}, "train": {"epochs": 1}}))
    code, _, err = run(capsys, "train", "--data", big, "--config", cfg, "--out-model", tmp_path / "m.json")
    assert code == 4 and "non-finite" in err


def test_config_echo_reproduces_checkpoint(tmp_path, capsys, data, trained):
    model, report = trained
    echo = tmp_path / "echo.json"
    echo.write_text(json.dumps(report["config"]))
    again = tmp_path / "again.json"
    code, out, _ = run(capsys, "train", "--data", data, "--config", echo, "--out-model", again)
    assert code == 0
    assert again.read_bytes() == model.read_bytes()
    assert json.loads(out) == report


def test_evaluate(tmp_path, capsys, data, trained):
    model, _ = trained
    rep = tmp_path / "eval.json"
    code, out, _ = run(capsys, "evaluate", "--data", data, "--model", model, "--report", rep)
    assert code == 0
    report = json.loads(rep.read_text())
    assert report == json.loads(out)
    assert set(report) == {"accuracy", "auc_roc", "confusion", "f1", "precision", "recall", "threshold"}
    assert set(report["confusion"]) == {"tp", "tn", "fp", "fn"}
    assert report["accuracy"] >= 0.95
    confusion = list(csv.reader(open(tmp_path / "eval.confusion.csv")))
    assert confusion[0] == ["actual\\predicted", "0", "1"] and len(confusion) == 3


def test_evaluate_schema_mismatch(tmp_path, capsys, trained):
    model, _ = trained
    other = tmp_path / "d5.csv"
    run(capsys, "gen-data", "--dim", 5, "--out", other)
    code, _, err = run(capsys, "evaluate", "--data", other, "--model", model)
    assert code == 3 and "match" in err


def test_explain_exact(tmp_path, capsys, data, trained):
    model, _ = trained
    out = tmp_path / "phi.csv"
    code, text, _ = run(capsys, "explain", "--model", model, "--data", data, "--row", 3, "--out", out)
    assert code == 0
    summary = json.loads(text)
    assert abs(summary["efficiency_residual"]) < 1e-9
    rows = list(csv.reader(open(out)))
    assert rows[0] == ["feature", "phi"]
    assert [r[0] for r in rows[1:]] == ["pc0", "pc1", "pc2", "pc3"]
    att = list(csv.reader(open(tmp_path / "phi.attention.csv")))
    assert att[0] == ["step", "alpha"] and len(att) == 1 + 3


def test_explain_sampled_is_repeatable(tmp_path, capsys, data, trained):
    model, _ = trained
    outs = []
    for name in ("a.csv", "b.csv"):
        code, text, _ = run(capsys, "explain", "--model", model, "--data", data, "--row", 0,
                            "--method", "sampled", "--m", 100, "--seed", 7, "--out", tmp_path / name)
        assert code == 0
        outs.append((tmp_path / name).read_bytes())
    assert outs[0] == outs[1]


def test_explain_bad_row(tmp_path, capsys, data, trained):
    model, _ = trained
    code, _, _ = run(capsys, "explain", "--model", model, "--data", data, "--row", 200, "--out", tmp_path / "p.csv")
    assert code == 3


def test_explain_exact_cap(tmp_path, capsys):
    data = tmp_path / "wide.csv"
    run(capsys, "gen-data", "--normal", 20, "--attack", 20, "--dim", 16, "--out", data)
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"features": {"k": 16}, "train": {"epochs": 1}}))
    model = tmp_path / "m.json"
    assert run(capsys, "train", "--data", data, "--config", cfg, "--out-model", model)[0] == 0
    code, _, err = run(capsys, "explain", "--model", model, "--data", data, "--row", 0, "--out", tmp_path / "p.csv")
    assert code == 2 and "--method sampled" in err


def test_explain_ig_topk_uses_raw_names(tmp_path, capsys, data):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"features": {"mode": "ig-topk", "k": 3}, "train": {"epochs": 2}}))
    model = tmp_path / "m.json"
    assert run(capsys, "train", "--data", data, "--config", cfg, "--out-model", model)[0] == 0
    out = tmp_path / "p.csv"
    assert run(capsys, "explain", "--model", model, "--data", data, "--row", 0, "--out", out)[0] == 0
    names = [r[0] for r in list(csv.reader(open(out)))[1:]]
    assert len(names) == 3 and all(n.startswith("f") for n in names)


def test_benchmark(tmp_path, capsys, data, trained):
    model, _ = trained
    code, out, err = run(capsys, "benchmark", "--model", model, "--data", data, "--reps", 1, "--warmup", 100)
    assert code == 0
    report = json.loads(out)
    assert report["latency"]["n"] == 1 and report["latency"]["warmup"] == 100
    assert report["model_size_bytes"] == model.stat().st_size == report["checkpoint_file_bytes"]
    assert f"{model.stat().st_size} bytes" in err
    code, out, _ = run(capsys, "benchmark", "--model", model, "--data", data, "--reps", 1000)
    lat = json.loads(out)["latency"]
    assert 0 < lat["p50_ms"] <= lat["p95_ms"] and 0 < lat["mean_ms"] < 10


def test_benchmark_unreadable_checkpoint(tmp_path, capsys, data):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert run(capsys, "benchmark", "--model", bad, "--data", data)[0] == 3
    assert run(capsys, "benchmark", "--model", tmp_path / "nope.json", "--data", data)[0] == 3


def test_zero_day(tmp_path, capsys, data, fast_config):
    rep = tmp_path / "zd.json"
    code, out, _ = run(capsys, "zero-day", "--data", data, "--category", "cat2",
                       "--config", fast_config, "--report", rep)
    assert code == 0
    report = json.loads(out)
    rows = list(csv.DictReader(open(data)))
    held = sum(r["category"] == "cat2" for r in rows)
    assert report["category"] == "cat2"
    assert report["n_holdout"] == held and report["n_train"] == 200 - held
    assert 0.0 <= report["detection_rate"] <= 1.0
    code, again, _ = run(capsys, "zero-day", "--data", data, "--category", "cat2", "--config", fast_config)
    assert json.loads(again) == report
    assert run(capsys, "zero-day", "--data", data, "--category", "cat9")[0] == 3


def test_module_entry_point(tmp_path):
    proc = subprocess.run(
        [sys.executable, "-m", "elai", "gen-data", "--dim", "0", "--out", str(tmp_path / "x.csv")],
        capture_output=True, text=True,
    )
    assert proc.returncode == 2 and "--dim" in proc.stderr
