"""CLI surface: exit codes, artifacts, table and JSON output."""

import json
import shutil
import subprocess
import sys

import numpy as np
import pytest

from evp import cli
from evp.dataset import load_manifest
from evp.serialization import read_checkpoint, read_evpt, write_evpt


def run(*argv):
    return cli.main(list(argv))


@pytest.fixture(scope="module")
def tex(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    out = root / "tex"
    assert run("synth", "--task", "texture", "--n", "4", "--size", "64",
               "--seed", "9", "--out", str(out)) == 0
    return out


# ---------------------------------------------------------------------------
# exit codes


def test_unknown_flag_is_usage_error(tmp_path, capsys):
    assert run("synth", "--task", "texture", "--n", "4",
               "--out", str(tmp_path), "--bogus") == 2
    assert "--bogus" in capsys.readouterr().err


def test_config_error_is_usage_error(tmp_path):
    assert run("synth", "--task", "texture", "--n", "3",
               "--out", str(tmp_path)) == 2


def test_missing_file_is_usage_error(tmp_path):
    assert run("pretrain", "--data", str(tmp_path / "nope.json"),
               "--steps", "1", "--out", str(tmp_path / "o.evpc")) == 2


def test_bad_step_size_is_usage_error(capsys):
    assert run("gradcheck", "--h", "0.1") == 2
    assert "error" in capsys.readouterr().err


def test_numeric_abort_is_exit_3(tex, tmp_path, capsys):
    code = run("pretrain", "--data", str(tex / "manifest.json"), "--steps", "1",
               "--noise", "inf", "--out", str(tmp_path / "o.evpc"))
    assert code == 3
    assert "numeric abort" in capsys.readouterr().err


# ---------------------------------------------------------------------------
# synth


def test_synth_writes_dataset(tex, capsys):
    man = load_manifest(tex / "manifest.json")
    assert len(man.samples) == 4
    assert (tex / man.samples[0].image).exists()


def test_synth_explicit_splits(tmp_path, capsys):
    out = tmp_path / "d"
    assert run("synth", "--task", "camo", "--n", "5", "--size", "32",
               "--out", str(out), "--train", "3", "--test", "2", "--json") == 0
    payload = json.loads(capsys.readouterr().out)
    assert (payload["train"], payload["val"], payload["test"]) == (3, 0, 2)


# ---------------------------------------------------------------------------
# mask-stats, params, gradcheck


def test_mask_stats_table(capsys):
    assert run("mask-stats", "--h", "256", "--w", "256", "--tau", "0.25") == 0
    out = capsys.readouterr().out
    assert "zero_fraction" in out and "analytic" in out
    assert "0.5970" in out and "0.5966" in out


def test_mask_stats_json(capsys):
    assert run("mask-stats", "--h", "256", "--w", "256", "--tau", "0.25",
               "--json") == 0
    payload = json.loads(capsys.readouterr().out)
    assert payload["zero_fraction"] == 0.5970306396484375
    assert payload["analytic"] == pytest.approx(0.596573590279973, abs=1e-12)


def test_params_v1_near_paper(capsys):
    assert run("params", "--config", "configs/b4_evp1_r4.json", "--json") == 0
    payload = json.loads(capsys.readouterr().out)
    assert payload["prompt_params"] == 549968
    assert abs(payload["prompt_params"] - 550_000) / 550_000 < 0.10


def test_params_v2_near_paper(capsys):
    assert run("params", "--config", "configs/b4_evp2_r16.json", "--json") == 0
    payload = json.loads(capsys.readouterr().out)
    assert payload["prompt_params"] == 534504
    assert abs(payload["prompt_params"] - 530_000) / 530_000 < 0.20


def test_params_needs_variant(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"backbone": "b4"}))
    assert run("params", "--config", str(cfg)) == 2
    cfg.write_text(json.dumps({"backbone": "b4", "variant": "v1", "rank": 4}))
    assert run("params", "--config", str(cfg)) == 2          # unknown key


def test_gradcheck_passes(capsys):
    assert run("gradcheck", "--json") == 0
    payload = json.loads(capsys.readouterr().out)
    assert payload["tolerance"] == 1e-6
    assert len(payload["cases"]) >= 10
    assert all(c["status"] == "ok" for c in payload["cases"])


def test_gradcheck_exit_tracks_failures(monkeypatch):
    monkeypatch.setattr(cli, "run_suite", lambda seed, h: [("forced", 1.0)])
    assert run("gradcheck") != 0


# ---------------------------------------------------------------------------
# hfc


def test_hfc_partition_round_trip(tex, tmp_path):
    man = load_manifest(tex / "manifest.json")
    src = tex / man.samples[0].image
    hi, lo = tmp_path / "h.evpt", tmp_path / "l.evpt"
    assert run("hfc", "--in", str(src), "--tau", "0.25",
               "--out-hfc", str(hi), "--out-lfc", str(lo)) == 0
    image = read_evpt(src)
    total = read_evpt(hi) + read_evpt(lo)
    assert np.abs(total - image).max() < 1e-5


def test_hfc_rejects_other_suffixes(tmp_path):
    bad = tmp_path / "img.npy"
    bad.write_bytes(b"x")
    assert run("hfc", "--in", str(bad)) == 2


# ---------------------------------------------------------------------------
# pretrain / train / eval pipeline


@pytest.fixture(scope="module")
def pipeline(tex, tmp_path_factory):
    root = tmp_path_factory.mktemp("pipe")
    pre = root / "pre"
    assert run("synth", "--task", "shade", "--n", "4", "--size", "64",
               "--seed", "31", "--out", str(pre), "--train", "4") == 0
    ckpt = root / "backbone.evpc"
    assert run("pretrain", "--data", str(pre / "manifest.json"),
               "--steps", "2", "--out", str(ckpt)) == 0
    cfg = root / "cfg.json"
    cfg.write_text(json.dumps({
        "strategy": "decoder", "steps": 2, "seed": 1,
        "pretrained": str(ckpt),
    }))
    return {"root": root, "ckpt": ckpt, "cfg": cfg}


def test_pretrain_checkpoint_is_backbone_only(pipeline):
    state = read_checkpoint(pipeline["ckpt"])
    assert state and all(k.startswith("backbone.") for k in state)


def test_train_then_eval_checkpoint(pipeline, tex, capsys):
    model_out = pipeline["root"] / "model.evpc"
    assert run("train", "--config", str(pipeline["cfg"]),
               "--data", str(tex / "manifest.json"), "--out", str(model_out)) == 0
    lines = [l for l in capsys.readouterr().out.splitlines() if l.strip()]
    rows = [json.loads(l) for l in lines]
    assert {"epoch", "loss", "val_iou", "lr"} <= set(rows[0])
    state = read_checkpoint(model_out)
    assert {k.split(".")[0] for k in state} == {"backbone", "decoder"}

    report_out = pipeline["root"] / "report.json"
    assert run("eval", "--data", str(tex / "manifest.json"),
               "--config", str(pipeline["cfg"]), "--ckpt", str(model_out),
               "--out", str(report_out), "--json") == 0
    payload = json.loads(report_out.read_text())
    assert payload["kind"] == "eval"
    assert payload["n"] == 1                    # default split held out one test sample
    assert "iou" in payload["means"]


def test_eval_needs_exactly_one_mode():
    assert run("eval") == 2


def test_eval_dirs_mode(tmp_path, capsys):
    pred, gt = tmp_path / "pred", tmp_path / "gt"
    pred.mkdir(), gt.mkdir()
    rng = np.random.default_rng(0)
    for stem in ("a", "b"):
        g = (rng.random((8, 8)) > 0.5).astype(np.float32)
        write_evpt(gt / f"{stem}.evpt", g)
        write_evpt(pred / f"{stem}.evpt", g)
    assert run("eval", "--pred-dir", str(pred), "--gt-dir", str(gt),
               "--json") == 0
    payload = json.loads(capsys.readouterr().out)
    assert payload["n"] == 2
    assert payload["means"]["f1"] == 1.0
    assert [r["name"] for r in payload["per_sample"]] == ["a", "b"]

    (pred / "c.evpt").write_bytes((pred / "a.evpt").read_bytes())
    assert run("eval", "--pred-dir", str(pred), "--gt-dir", str(gt)) == 2


# ---------------------------------------------------------------------------
# compare


def test_compare_and_tau_sweep_cli(pipeline, tmp_path, capsys):
    data = tmp_path / "cmp"
    assert run("synth", "--task", "texture", "--n", "4", "--size", "64",
               "--seed", "41", "--out", str(data), "--train", "2", "--test", "2") == 0
    report_path = tmp_path / "cmp.json"
    assert run("compare", "--data", str(data / "manifest.json"),
               "--pretrained", str(pipeline["ckpt"]),
               "--strategies", "decoder", "--seeds", "1", "--steps", "1",
               "--out", str(report_path)) == 0
    table = capsys.readouterr().out
    assert "strategy" in table and "decoder" in table
    payload = json.loads(report_path.read_text())
    assert payload["kind"] == "compare"
    assert payload["rows"][0]["status"] == "ok"

    assert run("compare", "--data", str(data / "manifest.json"),
               "--pretrained", str(pipeline["ckpt"]),
               "--seeds", "1", "--steps", "1", "--taus", "0.25,0.9",
               "--out", str(tmp_path / "sweep.json")) == 0
    sweep = json.loads((tmp_path / "sweep.json").read_text())
    assert sweep["kind"] == "tau_sweep"
    assert [r["tau"] for r in sweep["rows"]] == [0.25, 0.9]

    assert run("compare", "--data", str(data / "manifest.json"),
               "--pretrained", str(pipeline["ckpt"]),
               "--strategies", "decoder,warp", "--seeds", "1") == 2


def test_bad_seed_list_is_usage_error(pipeline, tex):
    assert run("compare", "--data", str(tex / "manifest.json"),
               "--pretrained", str(pipeline["ckpt"]), "--seeds", "one") == 2


# ---------------------------------------------------------------------------
# packaging


def test_console_script_runs():
    exe = shutil.which("evp")
    assert exe is not None
    proc = subprocess.run([exe, "mask-stats", "--h", "32", "--w", "32",
                           "--tau", "0.5", "--json"],
                          capture_output=True, text=True, timeout=120)
    assert proc.returncode == 0
    assert json.loads(proc.stdout)["h"] == 32


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "evp.cli", "mask-stats",
                           "--h", "16", "--w", "16", "--tau", "1.0", "--json"],
                          capture_output=True, text=True, timeout=120)
    assert proc.returncode == 0
    assert json.loads(proc.stdout)["zero_fraction"] == 1.0
