"""End-to-end pipeline and CLI flows over synthetic sessions."""

from __future__ import annotations

import json

import pytest

from adlsense.assist import BehaviorTable, ClassBehavior, save_behavior_table
from adlsense.cli import main
from adlsense.evaluation import LabeledSample
from adlsense.fusion import PipelineConfig, load_weights, random_weights, store_weights
from adlsense.motion import average_motion, compute_motion_embedding
from adlsense.pipeline import CalibrationConfig, calibrate, make_provider, run_session
from adlsense.skeleton import SamplerConfig, load_session, sample_windows, save_session
from adlsense.space import load_space

from conftest import oscillating_frames


CLASS_PARAMS = {
    "brush": dict(moving_joints=(7, 8), amplitude=0.12, seed=1),
    "eat": dict(moving_joints=(11, 12, 2), amplitude=0.2, seed=2),
}


def write_corpus(tmp_path, sessions_per_class=4, n_frames=320):
    """Labeled session corpus: two motion styles, several takes each."""
    labels_path = tmp_path / "labels.jsonl"
    records = []
    samples = []
    for cls, params in CLASS_PARAMS.items():
        for k in range(sessions_per_class):
            path = tmp_path / f"{cls}_{k}.jsonl"
            frames = oscillating_frames(
                n_frames,
                moving_joints=params["moving_joints"],
                amplitude=params["amplitude"],
                seed=params["seed"] * 100 + k,
                phase=0.3 * k,
            )
            save_session(frames, path)
            records.append(
                {
                    "sample_id": f"{cls}_{k}",
                    "subject_id": f"subject_{k % 2}",
                    "class": cls,
                    "path": str(path),
                }
            )
            samples.append(
                LabeledSample(
                    sample_id=f"{cls}_{k}",
                    subject_id=f"subject_{k % 2}",
                    true_class=cls,
                    path=str(path),
                )
            )
    labels_path.write_text("".join(json.dumps(r) + "\n" for r in records))
    return labels_path, samples


def small_weights():
    return random_weights(
        0, conv2d_channels=8, conv1d_channels=8, pipeline=PipelineConfig(num_classes=2)
    )


def write_behaviors(tmp_path):
    table = BehaviorTable(
        classes={
            0: ClassBehavior("brush", ("brush.step1", "brush.step2")),
            1: ClassBehavior("eat", ("eat.step1",)),
        },
        reinforcement=("encourage",),
    )
    path = tmp_path / "behaviors.json"
    save_behavior_table(table, path)
    return path


# -- library-level pipeline ----------------------------------------------------


def test_calibrate_thresholds_match_percentile_oracle(tmp_path):
    labels_path, samples = write_corpus(tmp_path)
    weights = small_weights()
    provider = make_provider("synthetic")
    config = SamplerConfig()
    result = calibrate(
        samples, {"brush": 0, "eat": 1}, config, weights, provider,
        config=CalibrationConfig(percentile_lo=0, percentile_hi=100,
                                 margin_lo=1.0, margin_hi=1.0),
    )
    averages = []
    for s in samples:
        for window in sample_windows(load_session(s.path), config):
            averages.append(average_motion(compute_motion_embedding(window)))
    assert result.gate.m_min == pytest.approx(min(averages))
    assert result.gate.m_max == pytest.approx(max(averages))
    assert set(result.space.class_ids) == {0, 1}
    assert result.policy.tau_unseen > 0


def test_stationary_session_is_all_non_adl(tmp_path):
    labels_path, samples = write_corpus(tmp_path)
    weights = small_weights()
    provider = make_provider("synthetic")
    result = calibrate(samples, {"brush": 0, "eat": 1}, SamplerConfig(), weights, provider)

    still = oscillating_frames(200, amplitude=0.0)
    out = run_session(
        still, SamplerConfig(), result.gate, result.space.snapshot(),
        weights=weights, provider=provider,
    )
    assert out.outcomes
    assert all(o.decision.adl_type.value == "non_adl" for o in out.outcomes)
    assert out.events == []


def test_training_style_session_decided_seen(tmp_path):
    labels_path, samples = write_corpus(tmp_path)
    weights = small_weights()
    provider = make_provider("synthetic")
    result = calibrate(samples, {"brush": 0, "eat": 1}, SamplerConfig(), weights, provider)

    frames = load_session(samples[0].path)  # a brush training session
    out = run_session(
        frames, SamplerConfig(), result.gate, result.space.snapshot(),
        weights=weights, provider=provider,
    )
    adl = [o.decision for o in out.outcomes if o.decision.m_adl]
    assert adl, "expected motion to pass the gate"
    seen = [d for d in adl if d.adl_type.value == "seen"]
    assert len(seen) / len(adl) >= 0.9
    assert all(d.class_id == 0 for d in seen)


# -- CLI flows -------------------------------------------------------------------


def run_cli(*argv) -> int:
    return main([str(a) for a in argv])


@pytest.fixture
def workdir(tmp_path):
    labels_path, _ = write_corpus(tmp_path)
    weights_path = tmp_path / "weights.bin"
    store_weights(small_weights(), weights_path)
    return tmp_path, labels_path, weights_path


def test_cli_calibrate_run_roundtrip(workdir, capsys):
    tmp_path, labels_path, weights_path = workdir
    out_dir = tmp_path / "calib"
    assert run_cli(
        "calibrate", "--labels", labels_path, "--weights", weights_path,
        "--out", out_dir, "--user", "tester",
    ) == 0
    assert (out_dir / "space.json").exists()
    assert (out_dir / "thresholds.json").exists()
    space = load_space(out_dir / "space.json")
    assert space.user_id == "tester"
    assert space.gate is not None

    behaviors = write_behaviors(tmp_path)
    run_dir = tmp_path / "run1"
    assert run_cli(
        "run", "--session", tmp_path / "brush_0.jsonl", "--weights", weights_path,
        "--space", out_dir / "space.json", "--behaviors", behaviors, "--out", run_dir,
    ) == 0
    decisions = [
        json.loads(line)
        for line in (run_dir / "decisions.jsonl").read_text().splitlines()
    ]
    assert decisions
    assert all("motion_embedding" in d and len(d["motion_embedding"]) == 19 for d in decisions)
    seen = [d for d in decisions if d["adl_type"] == "seen"]
    assert seen and all(d["class_id"] == 0 for d in seen)
    events = [
        json.loads(line) for line in (run_dir / "events.jsonl").read_text().splitlines()
    ]
    assert events and events[0]["kind"] == "instruction"
    assert events[0]["message_key"] == "brush.step1"


def test_cli_run_reruns_byte_identical(workdir):
    tmp_path, labels_path, weights_path = workdir
    out_dir = tmp_path / "calib"
    run_cli("calibrate", "--labels", labels_path, "--weights", weights_path, "--out", out_dir)
    behaviors = write_behaviors(tmp_path)
    blobs = []
    for name in ("runA", "runB"):
        run_dir = tmp_path / name
        assert run_cli(
            "run", "--session", tmp_path / "eat_1.jsonl", "--weights", weights_path,
            "--space", out_dir / "space.json", "--behaviors", behaviors, "--out", run_dir,
        ) == 0
        blobs.append(
            (run_dir / "decisions.jsonl").read_bytes()
            + (run_dir / "events.jsonl").read_bytes()
        )
    assert blobs[0] == blobs[1]


def test_cli_provider_files_matches_synthetic(workdir):
    tmp_path, labels_path, weights_path = workdir
    out_dir = tmp_path / "calib"
    run_cli("calibrate", "--labels", labels_path, "--weights", weights_path, "--out", out_dir)
    features_dir = tmp_path / "features"
    synth_dir = tmp_path / "run_synth"
    assert run_cli(
        "run", "--session", tmp_path / "brush_1.jsonl", "--weights", weights_path,
        "--space", out_dir / "space.json", "--out", synth_dir,
        "--features-out", features_dir,
    ) == 0
    files_dir = tmp_path / "run_files"
    assert run_cli(
        "run", "--session", tmp_path / "brush_1.jsonl", "--weights", weights_path,
        "--space", out_dir / "space.json", "--out", files_dir,
        "--provider", "files", "--features-dir", features_dir,
    ) == 0
    assert (synth_dir / "decisions.jsonl").read_bytes() == (
        files_dir / "decisions.jsonl"
    ).read_bytes()


def test_cli_missing_weights_is_startup_error(workdir, capsys):
    tmp_path, labels_path, _ = workdir
    code = run_cli(
        "calibrate", "--labels", labels_path, "--weights", tmp_path / "nope.bin",
        "--out", tmp_path / "c",
    )
    assert code == 1
    assert "weights" in capsys.readouterr().err


def test_cli_single_session_degenerate_warning(tmp_path, capsys):
    # One session only: tau holdout impossible; warning, strict exit nonzero.
    path = tmp_path / "only.jsonl"
    save_session(oscillating_frames(200, seed=5), path)
    labels = tmp_path / "labels.jsonl"
    labels.write_text(
        json.dumps(
            {"sample_id": "only", "subject_id": "u", "class": "a", "path": str(path)}
        )
        + "\n"
    )
    weights_path = tmp_path / "w.bin"
    store_weights(
        random_weights(0, conv2d_channels=8, conv1d_channels=8,
                       pipeline=PipelineConfig(num_classes=2)),
        weights_path,
    )
    assert run_cli(
        "calibrate", "--labels", labels, "--weights", weights_path,
        "--out", tmp_path / "c1",
    ) == 0
    assert "tau" in capsys.readouterr().err
    assert run_cli(
        "calibrate", "--labels", labels, "--weights", weights_path,
        "--out", tmp_path / "c2", "--strict",
    ) == 1


def test_cli_weights_init_show(tmp_path, capsys):
    out = tmp_path / "w.bin"
    assert run_cli(
        "weights", "init", "--out", out, "--seed", 7,
        "--conv2d-channels", 8, "--conv1d-channels", 8, "--classes", 3,
    ) == 0
    assert out.exists()
    again = tmp_path / "w2.bin"
    run_cli("weights", "init", "--out", again, "--seed", 7,
            "--conv2d-channels", 8, "--conv1d-channels", 8, "--classes", 3)
    assert out.read_bytes() == again.read_bytes()

    assert run_cli("weights", "show", "--weights", out) == 0
    printed = capsys.readouterr().out
    assert "conv2d_kernel" in printed and "num_classes" in printed

    loaded = load_weights(out)
    assert loaded.pipeline.num_classes == 3


def test_cli_space_show_export(workdir, capsys, tmp_path):
    _, labels_path, weights_path = workdir
    out_dir = tmp_path / "calib"
    run_cli("calibrate", "--labels", labels_path, "--weights", weights_path, "--out", out_dir)
    assert run_cli("space", "show", "--space", out_dir / "space.json") == 0
    printed = capsys.readouterr().out
    assert "classes:" in printed and "brush" in printed

    exported = tmp_path / "exported.json"
    assert run_cli("space", "export", "--space", out_dir / "space.json", "--out", exported) == 0
    assert load_space(exported).class_ids == load_space(out_dir / "space.json").class_ids


def test_cli_eval_with_hand_built_predictions(tmp_path, capsys):
    labels = tmp_path / "labels.jsonl"
    rows = [
        {"sample_id": f"s{i}", "subject_id": f"u{i % 3}", "class": "a" if i < 6 else "b"}
        for i in range(10)
    ]
    labels.write_text("".join(json.dumps(r) + "\n" for r in rows))

    perfect = tmp_path / "perfect.jsonl"
    perfect.write_text(
        json.dumps({"method": "perfect"}) + "\n"
        + "".join(
            json.dumps({"sample_id": r["sample_id"], "class": r["class"]}) + "\n"
            for r in rows
        )
    )
    constant = tmp_path / "constant.jsonl"
    constant.write_text(
        json.dumps({"method": "constant"}) + "\n"
        + "".join(
            json.dumps({"sample_id": r["sample_id"], "class": "a"}) + "\n" for r in rows
        )
    )
    rates = tmp_path / "rates.json"
    rates.write_text(
        json.dumps(
            {
                "seen": [[32, 40], [31, 40], [33, 40]],
                "unseen": [[9, 10], [7, 10], [8, 10]],
                "atypical": [[16, 20], [17, 20], [19, 20]],
            }
        )
    )
    report = tmp_path / "report"
    assert run_cli(
        "eval", "--labels", labels, "--out", report, "--rates", rates, perfect, constant
    ) == 0
    payload = json.loads((tmp_path / "report.json").read_text())
    assert payload["metrics"]["perfect"]["macro_f1"] == 1.0
    # constant predicts 'a' always: recall a = 1, b = 0 -> macro recall 0.5.
    assert payload["metrics"]["constant"]["macro_recall"] == pytest.approx(0.5)
    assert "friedman" in payload["tests"]
    assert "constant vs perfect" in payload["tests"]["mcnemar"] or \
           "perfect vs constant" in payload["tests"]["mcnemar"]
    text = (tmp_path / "report.txt").read_text()
    assert "81.9%" in text


def test_cli_config_file_and_env_precedence(workdir, monkeypatch, tmp_path):
    tmp_path, labels_path, weights_path = workdir
    out_dir = tmp_path / "calib"
    run_cli("calibrate", "--labels", labels_path, "--weights", weights_path, "--out", out_dir)

    # Paths come from the config file referenced by ADLSENSE_CONFIG.
    config = {
        "weights": str(weights_path),
        "space": str(out_dir / "space.json"),
        "session": str(tmp_path / "brush_0.jsonl"),
        "out": str(tmp_path / "run_env"),
    }
    config_path = tmp_path / "config.json"
    config_path.write_text(json.dumps(config))
    monkeypatch.setenv("ADLSENSE_CONFIG", str(config_path))
    assert run_cli("run") == 0
    assert (tmp_path / "run_env" / "decisions.jsonl").exists()

    # A flag overrides the file value.
    assert run_cli("run", "--out", tmp_path / "run_flag") == 0
    assert (tmp_path / "run_flag" / "decisions.jsonl").exists()


def test_cli_eval_missing_sample_lists_ids(tmp_path, capsys):
    labels = tmp_path / "labels.jsonl"
    labels.write_text(
        '{"sample_id": "s0", "subject_id": "u", "class": "a"}\n'
        '{"sample_id": "s1", "subject_id": "u", "class": "a"}\n'
    )
    partial = tmp_path / "partial.jsonl"
    partial.write_text(
        '{"method": "partial"}\n{"sample_id": "s0", "class": "a"}\n'
    )
    assert run_cli("eval", "--labels", labels, "--out", tmp_path / "r", partial) == 1
    assert "s1" in capsys.readouterr().err
