import json

import numpy as np
import pytest

from robustjet import cli
from robustjet.data import binary_row_count, load_csv, load_dataset
from robustjet.model import ModelParams, predict


def run(*argv):
    return cli.main([str(a) for a in argv])


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    assert run("synth", "--n", 200, "--seed", 1, "--out", d / "src.csv") == 0
    assert run("train", "--data", d / "src.csv", "--batch-size", 64, "--seed", 2, "--out", d / "m.json") == 0
    return d


class TestSynth:
    def test_rows_and_manifest(self, work):
        ds = load_csv(work / "src.csv")
        assert ds.n == 200
        man = json.loads((work / "src.csv.manifest.json").read_text())
        assert man["command"] == "synth" and man["row_counts"] == {"output": 200}
        assert len(man["config_hash"]) == 64

    def test_missing_out(self):
        assert run("synth", "--n", 10) == 2

    def test_rerun_identical(self, tmp_path):
        for name in ("a.csv", "b.csv"):
            assert run("synth", "--n", 50, "--seed", 9, "--out", tmp_path / name) == 0
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


class TestGen:
    def test_datagen1_train_size(self, tmp_path):
        run("synth", "--n", 1000, "--out", tmp_path / "s.ards")
        assert run("gen", "--source", tmp_path / "s.ards", "--preset", "DataGen1", "--out", tmp_path / "g.ards") == 0
        assert binary_row_count(tmp_path / "g.ards") == 50_000
        man = json.loads((tmp_path / "g.ards.manifest.json").read_text())
        assert man["report"]["gen_config"]["n_bins"] == 100

    def test_val_preset_fields(self, work, tmp_path):
        out = tmp_path / "v.csv"
        assert run("gen", "--source", work / "src.csv", "--preset", "DataGen2", "--split", "val",
                   "--variants", 2, "--out", out) == 0
        cfg = json.loads((tmp_path / "v.csv.manifest.json").read_text())["report"]["gen_config"]
        assert (cfg["n_bins"], cfg["n_vars"]) == (200, 10)
        assert load_csv(out).n == 400

    def test_bad_n_vars(self, work, tmp_path):
        assert run("gen", "--source", work / "src.csv", "--n-bins", 10, "--n-vars", 90, "--out", tmp_path / "x.csv") == 2

    def test_missing_source(self, tmp_path):
        assert run("gen", "--source", tmp_path / "nope.csv", "--preset", "DataGen1", "--out", tmp_path / "x.csv") == 1


class TestTrain:
    def test_default_epochs_and_rerun(self, work, tmp_path):
        man = json.loads((work / "m.json.manifest.json").read_text())
        assert man["report"]["train_config"]["epochs"] == 1
        assert man["row_counts"] == {"trained": 200}
        run("train", "--data", work / "src.csv", "--batch-size", 64, "--seed", 2, "--out", tmp_path / "m2.json")
        assert (tmp_path / "m2.json").read_bytes() == (work / "m.json").read_bytes()

    def test_bad_config(self, work, tmp_path):
        cfg = tmp_path / "c.json"
        cfg.write_text("{not json")
        assert run("train", "--data", work / "src.csv", "--config", cfg, "--out", tmp_path / "m.json") == 2

    def test_ensemble(self, work, tmp_path):
        out = tmp_path / "ens"
        assert run("train-ensemble", "--dataset", f"DataAug1={work / 'src.csv'}",
                   "--dataset", f"DataAug2={work / 'src.csv'}", "--batch-size", 64, "--out", out) == 0
        members = sorted(p.name for p in out.glob("member_*.json"))
        assert members == [f"member_{k}.json" for k in range(4)]
        spec = json.loads((out / "manifest.json").read_text())["report"]["spec"]
        assert [m["input_dropout"] for m in spec["members"]] == [0.075, 0.075, 0.125, 0.125]

    def test_ensemble_missing_dataset(self, work, tmp_path):
        assert run("train-ensemble", "--dataset", f"DataAug1={work / 'src.csv'}", "--out", tmp_path / "e") == 2


class TestAttackEval:
    def test_zero_vars_equals_clean_error(self, work, tmp_path):
        assert run("attack", "--model", work / "m.json", "--data", work / "src.csv", "--n-vars", 0,
                   "--max-tries", 3, "--out", tmp_path / "adv.csv") == 0
        rate = json.loads((tmp_path / "adv.csv.manifest.json").read_text())["report"]["success_rate"]
        m = ModelParams.load(work / "m.json")
        ds = load_csv(work / "src.csv")
        assert rate == np.mean(predict(m, ds.X) != ds.y)

    def test_schema_mismatch(self, work, tmp_path):
        schema = tmp_path / "s.txt"
        schema.write_text("\n".join(f"c{i},PT" for i in range(87)) + "\n")
        assert run("gen", "--source", work / "src.csv", "--schema", schema, "--preset", "DataGen1",
                   "--out", tmp_path / "x.csv") == 2

    def test_eval_same_sets(self, work, tmp_path, capsys):
        out = tmp_path / "metrics.json"
        assert run("eval", "--model", work / "m.json", "--clean", work / "src.csv", "--adv", work / "src.csv",
                   "--out", out) == 0
        met = json.loads(out.read_text())
        assert met["clean_acc"] == met["adv_acc"] == met["mixed_score"]
        assert json.loads(capsys.readouterr().out) == met

    def test_workers_identical(self, work, tmp_path):
        for w in (1, 8):
            run("gen", "--source", work / "src.csv", "--preset", "DataGen1", "--variants", 3,
                "--workers", w, "--out", tmp_path / f"g{w}.ards")
            run("attack", "--model", work / "m.json", "--data", work / "src.csv", "--max-tries", 20,
                "--workers", w, "--out", tmp_path / f"a{w}.csv")
        assert (tmp_path / "g1.ards").read_bytes() == (tmp_path / "g8.ards").read_bytes()
        assert (tmp_path / "a1.csv").read_bytes() == (tmp_path / "a8.csv").read_bytes()


class TestReport:
    def test_outputs(self, work, tmp_path):
        adv = tmp_path / "adv.csv"
        run("attack", "--model", work / "m.json", "--data", work / "src.csv", "--max-tries", 20, "--out", adv)
        met = tmp_path / "base.json"
        run("eval", "--model", work / "m.json", "--clean", work / "src.csv", "--adv", adv,
            "--attack-manifest", tmp_path / "adv.csv.manifest.json", "--out", met)
        out = tmp_path / "rep"
        assert run("report", "--metrics", met, "--train-manifest", work / "m.json.manifest.json",
                   "--attack-manifest", tmp_path / "adv.csv.manifest.json", "--out-dir", out) == 0
        lines = (out / "summary.csv").read_text().splitlines()
        assert lines[0].split(",")[:4] == ["run", "clean_acc", "adv_acc", "mixed_score"]
        assert lines[1].startswith("base,")
        for name in ("accuracy.png", "loss.png", "adv_tries.png"):
            assert (out / name).read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"
