"""[SECONDARY] exporter conformance: files written by the TypeScript exporter
load through this package's feature loader with zero shape/checksum errors,
and exporter window counts match this package's sampler on shared sessions.

Skipped when the exporter has not been built (``npm run build`` in exporter/).
"""

from __future__ import annotations

import hashlib
import json
import shutil
import subprocess
from pathlib import Path

import pytest

from adlsense.features import load_feature_bundle
from adlsense.pipeline import feature_file_path
from adlsense.skeleton import SamplerConfig, load_session, sample_windows, save_session

from conftest import oscillating_frames

REPO_ROOT = Path(__file__).resolve().parent.parent
EXPORTER_CLI = REPO_ROOT / "exporter" / "dist" / "cli.js"

pytestmark = pytest.mark.skipif(
    shutil.which("node") is None or not EXPORTER_CLI.exists(),
    reason="exporter not built (run `npm install && npm run build` in exporter/)",
)

MODELS_CONFIG = {
    "video": {"backend": "motion-blur-grid-v1", "native_grid": 12, "adaptation": "avg-pool"},
    "pose": {"backend": "joint-grid-v1"},
    "objects": {
        "backend": "static",
        "detections": [{"class_id": 4, "centroid": [0.4, 0.6], "confidence": 0.8}],
        "confidence_threshold": 0.25,
    },
}

# Ten shared sessions of varying length, including ones too short to emit.
SESSION_LENGTHS = (0, 40, 91, 96, 120, 150, 200, 260, 310, 400)


def run_exporter(*argv) -> subprocess.CompletedProcess:
    return subprocess.run(
        ["node", str(EXPORTER_CLI), *map(str, argv)],
        capture_output=True,
        text=True,
    )


def test_exporter_conformance(tmp_path):
    models_path = tmp_path / "models.json"
    models_path.write_text(json.dumps(MODELS_CONFIG))
    config = SamplerConfig()

    total_files = 0
    for i, n_frames in enumerate(SESSION_LENGTHS):
        session_path = tmp_path / f"session_{i}.jsonl"
        save_session(oscillating_frames(n_frames, seed=i, phase=0.2 * i), session_path)
        out_dir = tmp_path / f"export_{i}"
        proc = run_exporter(
            "export", "--session", session_path, "--models", models_path, "--out", out_dir
        )
        assert proc.returncode == 0, proc.stderr

        expected_windows = list(sample_windows(load_session(session_path), config))
        manifest = json.loads((out_dir / "manifest.json").read_text())
        assert len(manifest["windows"]) == len(expected_windows)
        assert [w["index"] for w in manifest["windows"]] == [
            w.window_index for w in expected_windows
        ]

        for entry, window in zip(manifest["windows"], expected_windows):
            path = out_dir / entry["file"]
            assert path == feature_file_path(out_dir, window.window_index)
            digest = hashlib.sha256(path.read_bytes()).hexdigest()
            assert digest == entry["sha256"]

            bundle = load_feature_bundle(path)  # raises on any shape violation
            assert bundle.window_index == window.window_index
            assert bundle.pose_joint_xy.min() >= 0.0
            assert bundle.pose_joint_xy.max() <= 1.0
            for det in bundle.objects:
                assert 0.0 <= det.centroid[0] <= 1.0
                assert 0.0 <= det.centroid[1] <= 1.0
            total_files += 1

        validate = run_exporter("validate", "--manifest", out_dir / "manifest.json")
        assert validate.returncode == 0, validate.stderr

    assert total_files > 0
    print(f"ACCEPTANCE exporter-conformance: PASS ({total_files} files over "
          f"{len(SESSION_LENGTHS)} sessions)")


def test_exporter_respects_sampler_flags(tmp_path):
    models_path = tmp_path / "models.json"
    models_path.write_text(json.dumps(MODELS_CONFIG))
    session_path = tmp_path / "session.jsonl"
    save_session(oscillating_frames(200, seed=3), session_path)

    config = SamplerConfig(sample_stride=4, window_len=16, emit_every=3)
    out_dir = tmp_path / "export"
    proc = run_exporter(
        "export", "--session", session_path, "--models", models_path, "--out", out_dir,
        "--stride", 4, "--emit-every", 3,
    )
    assert proc.returncode == 0, proc.stderr
    manifest = json.loads((out_dir / "manifest.json").read_text())
    expected = list(sample_windows(load_session(session_path), config))
    assert len(manifest["windows"]) == len(expected)
    for entry, window in zip(manifest["windows"], expected):
        assert load_feature_bundle(out_dir / entry["file"]).window_index == window.window_index

    # The feature contract pins 16-step windows; other lengths are refused.
    bad = run_exporter(
        "export", "--session", session_path, "--models", models_path,
        "--out", tmp_path / "bad", "--window-len", 12,
    )
    assert bad.returncode == 1
    assert "refusing to reshape" in bad.stderr
