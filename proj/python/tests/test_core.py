# Copyright 2026-present the handlab authors
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.
import json
import pathlib

import numpy as np
import pytest

import handlab

CONFIGS = pathlib.Path(__file__).resolve().parents[2] / "configs"


def test_generate_sample_is_deterministic():
    a = handlab.generate_sample("synth", 3, seed=9)
    b = handlab.generate_sample("synth", 3, seed=9)
    assert a["id"] == "000003"
    assert a["labels"].shape == (48, 48)
    assert a["joints"].shape == (handlab.NUM_JOINTS, 3)
    np.testing.assert_array_equal(a["labels"], b["labels"])
    np.testing.assert_array_equal(a["depth"], b["depth"])
    assert ((a["labels"] > 0) == (a["foreground"] > 0)).all()
    assert a["labels"].max() <= 20


def test_unknown_split():
    with pytest.raises(ValueError):
        handlab.generate_sample("train", 0)


def test_hamming_counts_cells():
    a = np.zeros((3, 3), np.uint8)
    b = a.copy()
    b[0, 0] = 20
    b[2, 1] = 1
    assert handlab.hamming_distance(a, b) == 2
    assert handlab.hamming_distance(a, a) == 0


def test_dictionary_search_matches_scan():
    maps = [handlab.generate_sample("synth", i, seed=2)["labels"] for i in range(4)]
    d = handlab.PatchDictionary.from_label_maps(maps, patch_size=9, max_patches=500, seed=1)
    assert len(d) == 500
    assert d.patch_size == 9
    rng = np.random.default_rng(0)
    for _ in range(20):
        q = rng.integers(0, 21, size=(9, 9), dtype=np.uint8)
        fast = [(n.id, n.distance) for n in d.search(q, k=5)]
        slow = [(n.id, n.distance) for n in d.search(q, k=5, exhaustive=True)]
        assert fast == slow
    exact = d.search(d.patch(17), k=1)[0]
    assert exact.distance == 0


def test_dictionary_file_round_trip(tmp_path):
    maps = [handlab.generate_sample("synth", i, seed=2)["labels"] for i in range(2)]
    d = handlab.PatchDictionary.from_label_maps(maps, patch_size=3, max_patches=100)
    d.save(tmp_path / "d.pdct")
    back = handlab.PatchDictionary.load(tmp_path / "d.pdct")
    assert len(back) == len(d)
    np.testing.assert_array_equal(back.patch(5), d.patch(5))
    (tmp_path / "bad.pdct").write_bytes(b"nope")
    with pytest.raises(handlab.FormatError):
        handlab.PatchDictionary.load(tmp_path / "bad.pdct")


def test_restore_and_scores():
    truth = handlab.generate_sample("synth", 0, seed=4)["labels"]
    maps = [handlab.generate_sample("synth", i, seed=4)["labels"] for i in range(1, 30)]
    d = handlab.PatchDictionary.from_label_maps(maps, patch_size=9, max_patches=3000, seed=3)
    rng = np.random.default_rng(1)
    noisy = truth.copy()
    flip = (truth > 0) & (rng.random(truth.shape) < 0.3)
    noisy[flip] = rng.integers(1, 21, size=flip.sum())
    restored = handlab.restore(noisy, d, method="vote", window=9)
    assert restored.shape == truth.shape
    assert ((restored > 0) == (noisy > 0)).all()
    before = handlab.seg_accuracy(noisy, truth)["per_pixel"]
    after = handlab.seg_accuracy(restored, truth)["per_pixel"]
    assert after > before
    with pytest.raises(handlab.ContractError):
        handlab.restore(noisy, d, window=99)


def test_pose_error():
    a = np.zeros((14, 3))
    b = a.copy()
    b[0] = [0.75, 1.0, 0.0]
    e = handlab.pose_error(b, a)
    assert e["e3d"][0] == pytest.approx(5.0)
    assert e["max_3d"] == pytest.approx(5.0)


def test_pipeline_tiny_run(tmp_path):
    p = handlab.Pipeline(CONFIGS / "tiny.toml", out=str(tmp_path / "run"), jobs=1)
    outcomes = p.run_all()
    assert [o.stage for o in outcomes] == handlab.stage_names()
    assert all(o.ran for o in outcomes)
    summary = json.loads((tmp_path / "run" / "eval" / "summary.json").read_text())
    assert "restored-vote" in summary["per_pixel"]
    assert not any(o.ran for o in p.run_all())
    assert p.stale_reason("eval") == ""


def test_pipeline_dependency_error(tmp_path):
    p = handlab.Pipeline(CONFIGS / "tiny.toml", out=str(tmp_path / "run"))
    with pytest.raises(handlab.DependencyError, match="generate"):
        p.run_stage("build-dict")
    with pytest.raises(handlab.HandlabError):
        handlab.Pipeline(CONFIGS / "missing.toml")
