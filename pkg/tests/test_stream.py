import json

import numpy as np
import pytest

from seqprompt.errors import ParseError, ProtocolError
from seqprompt.harness.stream import load_stream, make_synthetic_stream, save_stream


def test_synthetic_layout():
    s = make_synthetic_stream(num_sessions=5, K=4, samples_per_class=10, input_dim=3)
    assert s.num_sessions == 5
    for t in range(1, 6):
        assert sorted(set(s.session(t).train_y)) == list(range(4 * (t - 1), 4 * t))
        assert len(s.session(t).train_y) == 4 * 8 and len(s.session(t).test_y) == 4 * 2
    assert len(set(np.concatenate([x.train_y for x in s.sessions]))) == 20


def test_cumulative_test_sets():
    s = make_synthetic_stream(num_sessions=3, K=2, samples_per_class=5)
    for t in (1, 2, 3):
        _, y = s.test_set(t)
        assert set(y.tolist()) == set(range(2 * t))


def test_same_seed_same_stream():
    a = make_synthetic_stream(seed=4)
    b = make_synthetic_stream(seed=4)
    for x, y in zip(a.sessions, b.sessions):
        assert x.train_x.tobytes() == y.train_x.tobytes() and x.test_x.tobytes() == y.test_x.tobytes()


def test_tight_clusters_centroid_oracle():
    s = make_synthetic_stream(num_sessions=5, K=4, cluster_spread=0.01, seed=2)
    train_x = np.concatenate([x.train_x for x in s.sessions])
    train_y = np.concatenate([x.train_y for x in s.sessions])
    centroids = np.stack([train_x[train_y == c].mean(0) for c in range(20)])
    x, y = s.test_set(5)
    pred = np.argmin(((x[:, None, :] - centroids[None]) ** 2).sum(-1), axis=1)
    assert np.all(pred == y)


def test_round_trip(tmp_path):
    s = make_synthetic_stream(num_sessions=3, K=2, samples_per_class=5, seed=1)
    loaded = load_stream(save_stream(s, tmp_path / "st"))
    assert loaded.K == s.K and loaded.class_maps == s.class_maps
    for a, b in zip(s.sessions, loaded.sessions):
        for name in ("train_x", "train_y", "test_x", "test_y"):
            assert np.array_equal(getattr(a, name), getattr(b, name))


def test_original_labels_are_remapped(tmp_path):
    s = make_synthetic_stream(num_sessions=2, K=2, samples_per_class=5, seed=1)
    root = save_stream(s, tmp_path / "st")
    manifest = json.loads((root / "manifest.json").read_text())
    relabel = {0: 70, 1: 10, 2: 33, 3: 5}
    manifest["class_maps"] = [[relabel[c] for c in m] for m in manifest["class_maps"]]
    for entry in manifest["sessions"]:
        for split in ("train", "test"):
            entry[split]["labels"] = [relabel[v] for v in entry[split]["labels"]]
    (root / "manifest.json").write_text(json.dumps(manifest))
    loaded = load_stream(root)
    assert loaded.class_maps == [[70, 10], [33, 5]]
    assert np.array_equal(loaded.session(2).train_y, s.session(2).train_y)


def test_shared_label_rejected(tmp_path):
    root = save_stream(make_synthetic_stream(num_sessions=2, K=2, samples_per_class=5), tmp_path / "st")
    manifest = json.loads((root / "manifest.json").read_text())
    manifest["class_maps"][1][0] = manifest["class_maps"][0][0]
    (root / "manifest.json").write_text(json.dumps(manifest))
    with pytest.raises(ProtocolError):
        load_stream(root)


def test_truncated_block_rejected(tmp_path):
    root = save_stream(make_synthetic_stream(num_sessions=2, K=2, samples_per_class=5), tmp_path / "st")
    block = root / "session2_test.f64"
    block.write_bytes(block.read_bytes()[:-3])
    with pytest.raises(ParseError):
        load_stream(root)


def test_truncated_manifest_rejected(tmp_path):
    root = save_stream(make_synthetic_stream(num_sessions=2, K=2, samples_per_class=5), tmp_path / "st")
    text = (root / "manifest.json").read_text()
    (root / "manifest.json").write_text(text[: len(text) // 2])
    with pytest.raises(ParseError):
        load_stream(root)
