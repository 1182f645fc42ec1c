import json
import os
import subprocess
import sys

import numpy as np
import pytest

from ecgfield.cli import main
from ecgfield.composer import read_png
from ecgfield.retrieval import EmbeddingIndex, read_report, save_index
from ecgfield.training.model import ModelConfig, init_params
from ecgfield.training.toy import ToyModel

COMMANDS = ("gen-synthetic", "ingest", "preprocess", "encode", "embed", "eval", "train-toy")
TOY = ["--image-size", "48", "--patch-size", "8", "--hidden", "8", "--embed-dim", "8", "--batch-size", "2",
       "--queue-size", "4"]


def _bytes(directory):
    return {p.name: p.read_bytes() for p in sorted(directory.iterdir()) if p.is_file()}


@pytest.mark.parametrize("command", COMMANDS)
def test_help_lists_defaults(command, capsys):
    with pytest.raises(SystemExit) as info:
        main([command, "--help"])
    assert info.value.code == 0
    out = capsys.readouterr().out
    assert "--seed" in out and "(default:" in out


def test_unknown_flag_is_usage_error(synth4, tmp_path):
    with pytest.raises(SystemExit) as info:
        main(["encode", str(synth4), str(tmp_path), "--no-such-flag"])
    assert info.value.code == 64


def test_ingest_fixture(synth4, tmp_path):
    assert main(["ingest", str(synth4), str(tmp_path / "out")]) == 0
    out = tmp_path / "out"
    assert len(list((out / "records").glob("*.hea"))) == 4
    assert len(list((out / "records").glob("*.dat"))) == 4
    summary = json.loads((out / "summary.json").read_text())
    assert summary["count"] == 4 and summary["splits"] == {"train": 2, "test": 2}
    # re-ingesting the output reproduces it byte for byte
    assert main(["ingest", str(out / "manifest.jsonl"), str(tmp_path / "again")]) == 0
    assert _bytes(out / "records") == _bytes(tmp_path / "again" / "records")


def test_ingest_empty_manifest(tmp_path):
    (tmp_path / "m.jsonl").write_text("")
    assert main(["ingest", str(tmp_path / "m.jsonl"), str(tmp_path / "out")]) == 0
    assert json.loads((tmp_path / "out" / "summary.json").read_text())["count"] == 0


def test_ingest_duplicate_ids(synth4, tmp_path):
    lines = synth4.read_text().splitlines()
    bad = synth4.parent / "dup_manifest.jsonl"
    try:
        bad.write_text("\n".join([lines[0], lines[0]]) + "\n")
        assert main(["ingest", str(bad), str(tmp_path / "out")]) == 2
    finally:
        bad.unlink()


def test_preprocess_warns_and_completes(synth4, tmp_path, capsys):
    assert main(["preprocess", str(synth4), str(tmp_path / "pre"), "--window-points", "3"]) == 0
    assert json.loads(capsys.readouterr().out)["notch_skipped"] == 4
    assert main(["encode", str(tmp_path / "pre" / "manifest.jsonl"), str(tmp_path / "enc"),
                 "--config", "rp_only", "--cell-size", "16", "--target-size", "32"]) == 0


def test_encode_custom_grid(synth4, tmp_path):
    args = ["encode", str(synth4), str(tmp_path / "e"), "--layout", "grid", "--methods", "mtf,gasf,rp",
            "--cell-size", "24"]
    assert main(args) == 0
    pngs = sorted((tmp_path / "e").glob("*.png"))
    assert len(pngs) == 4
    assert all(read_png(p).pixels.shape == (384, 384, 3) for p in pngs)
    listing = json.loads((tmp_path / "e" / "encode_manifest.json").read_text())
    assert len(listing["images"]) == 4


def test_encode_single_is_grayscale(synth4, tmp_path):
    assert main(["encode", str(synth4), str(tmp_path / "e"), "--layout", "single", "--methods", "rp",
                 "--cell-size", "16", "--target-size", "64"]) == 0
    assert all(read_png(p).channels == 1 for p in (tmp_path / "e").glob("*.png"))


def test_encode_unknown_method(synth4, tmp_path, capsys):
    code = main(["encode", str(synth4), str(tmp_path / "e"), "--layout", "grid", "--methods", "mtf,wavelet"])
    assert code == 3
    assert "--methods" in capsys.readouterr().err
    assert not list(tmp_path.glob("e/*.png"))


def test_encode_failure_removes_partial_output(synth4, tmp_path):
    # a window longer than the records fails on the first record of the second preset
    code = main(["encode", str(synth4), str(tmp_path / "e"), "--config", "mtf_only",
                 "--window", "20", "--cell-size", "16"])
    assert code == 3
    assert not list((tmp_path / "e").glob("*.png"))


def _identity_index(path, n=6, dim=4):
    rng = np.random.default_rng(0)
    v = rng.normal(size=(n, dim))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    return save_index(EmbeddingIndex.from_arrays([f"r{k}" for k in range(n)], v, v), path)


def test_eval_identity_index(tmp_path, capsys):
    idx = _identity_index(tmp_path / "i.bin")
    assert main(["eval", str(idx), "--out", str(tmp_path / "r.json"), "--figures", str(tmp_path / "fig")]) == 0
    out = capsys.readouterr().out.splitlines()
    assert out[0].split("\t") == ["direction", "R@1", "R@5", "R@10"]
    assert out[-1] == "RSUM\t600.00"
    reports = read_report(tmp_path / "r.json")
    assert reports[0].rsum == 600.0
    assert (tmp_path / "fig" / "recall_at_k.png").read_bytes()[:4] == b"\x89PNG"


def test_eval_corrupt_index(tmp_path):
    idx = _identity_index(tmp_path / "i.bin")
    blob = bytearray(idx.read_bytes())
    blob[30] ^= 0xFF
    idx.write_bytes(bytes(blob))
    assert main(["eval", str(idx)]) == 4
    assert main(["eval", str(tmp_path / "missing.bin")]) == 4


def test_eval_bad_k_list(tmp_path):
    with pytest.raises(SystemExit) as info:
        main(["eval", str(_identity_index(tmp_path / "i.bin")), "--k", "0,x"])
    assert info.value.code == 64


def test_train_toy_deterministic(synth4, tmp_path, capsys):
    runs = []
    for name in ("a", "b"):
        out = tmp_path / name
        assert main(["train-toy", str(synth4), str(out), "--steps", "3", *TOY]) == 0
        runs.append(out)
    for f in ("checkpoint.bin", "train_log.jsonl", "report.json", "test_index.bin", "recall_at_k.png",
              "loss_curves.png"):
        assert (runs[0] / f).read_bytes() == (runs[1] / f).read_bytes(), f
    table = capsys.readouterr().out
    assert "image_to_text" in table and "RSUM" in table
    # the saved model re-embeds the test split to the same index
    assert main(["embed", str(runs[0] / "checkpoint.bin"), str(synth4), str(tmp_path / "re.bin")]) == 0
    assert (tmp_path / "re.bin").read_bytes() == (runs[0] / "test_index.bin").read_bytes()


def test_train_toy_seed_changes_checkpoint(synth4, tmp_path):
    for seed in ("0", "1"):
        assert main(["train-toy", str(synth4), str(tmp_path / seed), "--steps", "1", "--seed", seed,
                     "--no-figures", *TOY]) == 0
    assert (tmp_path / "0" / "checkpoint.bin").read_bytes() != (tmp_path / "1" / "checkpoint.bin").read_bytes()


def test_train_toy_zero_steps_is_init(synth4, tmp_path):
    assert main(["train-toy", str(synth4), str(tmp_path / "z"), "--steps", "0", "--seed", "7",
                 "--no-figures", *TOY]) == 0
    model = ToyModel.load(tmp_path / "z" / "checkpoint.bin")
    init = init_params(ModelConfig(**model.model_cfg.to_dict()), 7)
    assert all(np.array_equal(model.params[k], init[k]) for k in init)
    assert model.step == 0
    assert (tmp_path / "z" / "train_log.jsonl").read_text() == ""


def test_train_toy_bad_config_is_usage(synth4, tmp_path):
    assert main(["train-toy", str(synth4), str(tmp_path / "x"), "--alpha", "2"]) == 64


def test_embed_bad_checkpoint(synth4, tmp_path):
    (tmp_path / "c.bin").write_bytes(b"garbage")
    assert main(["embed", str(tmp_path / "c.bin"), str(synth4), str(tmp_path / "i.bin")]) == 4


def test_gen_synthetic_is_reproducible(tmp_path):
    for name in ("a", "b"):
        assert main(["gen-synthetic", str(tmp_path / name), "--n-train", "3", "--n-test", "2", "--seed", "5"]) == 0
    assert _bytes(tmp_path / "a" / "records") == _bytes(tmp_path / "b" / "records")
    assert (tmp_path / "a" / "manifest.jsonl").read_bytes() == (tmp_path / "b" / "manifest.jsonl").read_bytes()


def test_console_script_entry_point():
    proc = subprocess.run([sys.executable, "-m", "ecgfield.cli", "--version"], capture_output=True, text=True)
    assert proc.returncode == 0 and proc.stdout.startswith("ecgfield ")


@pytest.mark.parametrize("level,shown", [("WARNING", True), ("ERROR", False)])
def test_log_level_from_environment(synth4, tmp_path, level, shown):
    env = dict(os.environ, ECG_FIELD_LOG=level)
    proc = subprocess.run([sys.executable, "-m", "ecgfield.cli", "preprocess", str(synth4), str(tmp_path / "p")],
                          capture_output=True, text=True, env=env)
    assert proc.returncode == 0
    assert ("notch" in proc.stderr) == shown
