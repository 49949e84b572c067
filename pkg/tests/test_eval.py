import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from activepc import eval as ev
from activepc.model import ActivePC
from activepc.trainer import TrainConfig, TrainingError, load_checkpoint, save_checkpoint

from .conftest import tiny_model_config


def brute_force_vote(probs):
    best, best_score = 0, -np.inf
    for c in range(probs.shape[1]):
        score = sum(row[c] for row in probs) / len(probs)
        if score > best_score:
            best, best_score = c, score
    return best


def test_aggregate_examples():
    assert ev.aggregate_video([[0.9, 0.1], [0.2, 0.8]]) == 0
    assert ev.aggregate_video([[0.3, 0.7]]) == 1
    assert ev.aggregate_video([[0.5, 0.5]]) == 0
    with pytest.raises(ValueError):
        ev.aggregate_video(np.zeros((0, 3)))
    with pytest.raises(ValueError):
        ev.aggregate_video([[0.5, 0.6]])


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 16), st.integers(2, 30), st.integers(0, 2**31), st.booleans())
def test_aggregate_matches_brute_force(clips, classes, seed, coarse):
    rng = np.random.default_rng(seed)
    raw = rng.integers(0, 3, (clips, classes)) + 1.0 if coarse else rng.random((clips, classes))
    probs = raw / raw.sum(axis=1, keepdims=True)
    assert ev.aggregate_video(probs) == brute_force_vote(probs)
    assert ev.aggregate_video(probs[rng.permutation(clips)]) == ev.aggregate_video(probs)


def test_report_accuracy_from_confusion():
    rep = ev.EvalReport(np.array([0, 1, 1, 2, 0]), np.array([0, 1, 2, 2, 1]), 3)
    c = rep.confusion
    assert c.sum() == 5 and np.trace(c) == 3
    assert rep.accuracy == 60.0 == 100 * np.trace(c) / c.sum()
    np.testing.assert_allclose(rep.per_class, [100.0, 50.0, 50.0])


def test_evaluate_covers_every_video(tiny_videos):
    model = ActivePC(tiny_model_config())
    rep = ev.evaluate(model, tiny_videos, 4, 64)
    assert len(rep.predictions) == len(tiny_videos) and rep.confusion.sum() == len(tiny_videos)
    again = ev.evaluate(model, tiny_videos, 4, 64)
    np.testing.assert_array_equal(rep.predictions, again.predictions)


def test_embedding_export(tmp_path, tiny_videos):
    model = ActivePC(tiny_model_config(widths=(8, 16, 16)))
    feats = ev.export_embeddings(model, tiny_videos, tmp_path / "e.ptve", 4, 64)
    raw = (tmp_path / "e.ptve").read_bytes()
    assert raw[:4] == b"PTVE"
    labels, read = ev.read_embeddings(tmp_path / "e.ptve")
    assert read.shape == (12, 40) == (len(tiny_videos), model.cfg.embedding_width)
    np.testing.assert_array_equal(labels, tiny_videos.labels)
    np.testing.assert_array_equal(read, feats)
    save_checkpoint(tmp_path / "m.ptvw", model)
    restored = ActivePC(tiny_model_config(widths=(8, 16, 16), seed=5))
    load_checkpoint(tmp_path / "m.ptvw", restored)
    ev.export_embeddings(restored, tiny_videos, tmp_path / "f.ptve", 4, 64)
    assert (tmp_path / "f.ptve").read_bytes() == raw


def test_ablation_rows_follow_component_table():
    assert ev.ABLATION_ROWS == ((False, False, False), (True, False, False), (True, True, False),
                                (True, False, True), (True, True, True))


def test_run_ablation_reports_failures(monkeypatch, tiny_videos):
    import activepc.trainer as trainer

    real_fit = trainer.fit

    def flaky_fit(model, *a, **kw):
        if not model.cfg.mns:
            raise TrainingError("non-finite loss nan on batch [0]")
        return real_fit(model, *a, **kw)

    monkeypatch.setattr(trainer, "fit", flaky_fit)
    cfg = TrainConfig(epochs=1, batch_size=6, clip_frames=4, points_per_frame=64)
    rows = ev.run_ablation(tiny_model_config(), cfg, tiny_videos, tiny_videos)
    assert len(rows) == 5
    failed = [r for r in rows if r.accuracy is None]
    assert {r.label for r in failed} == {"layered=off mns=off eeq=off", "layered=on mns=off eeq=off",
                                         "layered=on mns=off eeq=on"}
    assert all("non-finite" in r.error for r in failed)


def test_sweep_variance_convention():
    # the published radius rows; their reported variances are the ddof=1 values
    res = ev.SweepResult(ev.SWEEP_RADII, {False: [54.83, 55.11, 55.39, 54.52, 54.21, 53.51],
                                          True: [59.98, 60.10, 60.04, 59.73, 59.54, 59.30]})
    assert res.variance(False) == pytest.approx(0.456, abs=1e-3)
    assert res.variance(True) == pytest.approx(0.100, abs=1e-3)
    assert res.variance_ratio == pytest.approx(0.100 / 0.456, rel=0.01)
    flat = ev.SweepResult(ev.SWEEP_RADII, {True: [50.0] * 6})
    assert flat.variance(True) == 0.0
    missing = ev.SweepResult(ev.SWEEP_RADII, {True: [50.0] * 5 + [None]})
    assert missing.variance(True) is None


def test_sweep_scales_all_radii():
    cfg = tiny_model_config()
    assert ev.scaled_radii(cfg, 1.0) == pytest.approx((1.0, 2.0, 4.0))
    assert ev.scaled_radii(cfg, 0.2) == pytest.approx(cfg.radii)


def test_reports_are_written(tmp_path):
    rep = ev.EvalReport(np.array([0, 1]), np.array([0, 0]), 2, {"frames": 8})
    ev.write_report(rep, tmp_path, ["a", "b"])
    summary = dict(line.split("=") for line in (tmp_path / "eval_summary.txt").read_text().splitlines())
    assert summary["accuracy"] == "50.0000" and summary["frames"] == "8"
    assert (tmp_path / "eval_confusion.tsv").read_text().splitlines()[1] == "a\t1\t1"
    res = ev.SweepResult((0.1, 0.2), {False: [50.0, 52.0], True: [51.0, None]})
    ev.write_sweep(res, tmp_path)
    assert "absent" in (tmp_path / "sweep.tsv").read_text()
