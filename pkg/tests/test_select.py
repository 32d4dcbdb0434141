from __future__ import annotations

import math
import random

import numpy as np
import pytest

from speer.entity import PROBLEM, TEST, TREATMENT, EntitySpan
from speer.errors import DataFormatError
from speer.esg import ESG
from speer.select import (
    FEATURE_DIM,
    AdmissionStats,
    PRPoint,
    featurize,
    load_model,
    logistic_loss,
    loss_gradient,
    predict,
    save_model,
    sweep_thresholds,
    train,
    write_pr_csv,
)


def make_esg(esg_id=0, count=1, rank=1, semantic_type=TEST, surfaces=("wbc",),
             doc_ids=("n1",), first_start=0):
    mentions = []
    for i in range(count):
        doc = doc_ids[i % len(doc_ids)]
        start = first_start + i * 10
        mentions.append(EntitySpan(doc, start, start + len(surfaces[0]), surfaces[0], semantic_type))
    return ESG(esg_id=esg_id, surfaces=surfaces, mentions=tuple(mentions),
               semantic_type=semantic_type, mention_count=count, freq_rank=rank)


# --- featurize ----------------------------------------------------------------

def test_featurize_single_mention_last_rank():
    stats = AdmissionStats(note_count=4, total_esgs=7, concat_length=1000)
    features = featurize(make_esg(count=1, rank=7), stats)
    assert features[0] == pytest.approx(math.log(2))
    assert features[1] == pytest.approx(1.0)


def test_featurize_first_mention_at_offset_zero():
    stats = AdmissionStats(note_count=2, total_esgs=3, concat_length=500)
    features = featurize(make_esg(first_start=0), stats)
    assert features[6] == 0.0


def test_featurize_one_hot_type():
    stats = AdmissionStats(note_count=1, total_esgs=1, concat_length=10)
    for semantic_type, hot in ((PROBLEM, 2), (TEST, 3), (TREATMENT, 4)):
        features = featurize(make_esg(semantic_type=semantic_type), stats)
        assert features[hot] == 1.0
        assert sum(features[2:5]) == 1.0


def test_featurize_requires_rank():
    with pytest.raises(ValueError, match="freq_rank"):
        featurize(make_esg(rank=None), AdmissionStats(1, 1, 10))


def test_featurize_matches_hand_recomputation():
    rng = random.Random(71)
    for _ in range(50):
        note_count = rng.randint(1, 6)
        doc_ids = tuple(f"n{i}" for i in range(1, note_count + 1))
        count = rng.randint(1, 9)
        total = rng.randint(1, 30)
        rank = rng.randint(1, total)
        surfaces = tuple(f"s{i}" for i in range(rng.randint(1, 4)))
        semantic_type = rng.choice([PROBLEM, TEST, TREATMENT])
        esg = make_esg(count=count, rank=rank, semantic_type=semantic_type,
                       surfaces=surfaces, doc_ids=doc_ids, first_start=rng.randint(0, 50))
        offsets = {d: i * 100 for i, d in enumerate(doc_ids)}
        concat_length = rng.randint(600, 2000)
        stats = AdmissionStats(note_count, total, concat_length, offsets)
        got = featurize(esg, stats)
        # independent recomputation, scalar by scalar
        expected = [
            math.log(1 + count),
            rank / total,
            1.0 if semantic_type == PROBLEM else 0.0,
            1.0 if semantic_type == TEST else 0.0,
            1.0 if semantic_type == TREATMENT else 0.0,
            len({m.doc_id for m in esg.mentions}) / note_count,
            min(1.0, min(offsets[m.doc_id] + m.start for m in esg.mentions) / concat_length),
            math.log(1 + len(surfaces)),
        ]
        assert np.allclose(got, expected, atol=1e-12)


# --- training -------------------------------------------------------------------

def separable_points():
    x0 = np.zeros(FEATURE_DIM)
    x0[0] = 0.4
    x1 = np.zeros(FEATURE_DIM)
    x1[0] = 2.2
    return [(x0, False), (x1, True)]


def test_training_separates_two_points_within_500_epochs():
    model = train(separable_points(), epochs=500)
    (x0, _), (x1, _) = separable_points()
    assert predict(model, x0) < 0.5
    assert predict(model, x1) >= 0.5


def test_gradient_matches_central_finite_differences():
    rng = np.random.default_rng(73)
    X = rng.normal(size=(12, FEATURE_DIM))
    y = (rng.random(12) > 0.5).astype(float)
    y[0], y[1] = 0.0, 1.0
    h = 1e-6
    for _ in range(20):
        weights = rng.normal(size=FEATURE_DIM)
        bias = float(rng.normal())
        grad_w, grad_b = loss_gradient(weights, bias, X, y)
        for k in range(FEATURE_DIM):
            bumped = weights.copy()
            bumped[k] += h
            dipped = weights.copy()
            dipped[k] -= h
            fd = (logistic_loss(bumped, bias, X, y) - logistic_loss(dipped, bias, X, y)) / (2 * h)
            assert abs(grad_w[k] - fd) / max(1e-8, abs(fd)) < 1e-5
        fd_b = (logistic_loss(weights, bias + h, X, y) - logistic_loss(weights, bias - h, X, y)) / (2 * h)
        assert abs(grad_b - fd_b) / max(1e-8, abs(fd_b)) < 1e-5


def test_same_seed_gives_identical_weights():
    examples = separable_points()
    a = train(examples, epochs=50, seed=3)
    b = train(examples, epochs=50, seed=3)
    assert np.array_equal(a.weights, b.weights) and a.bias == b.bias


def test_single_class_rejected():
    x = np.zeros(FEATURE_DIM)
    with pytest.raises(ValueError, match="positive and one negative"):
        train([(x, True), (x, True)])


def test_loss_nonincreasing_under_default_learning_rate():
    rng = np.random.default_rng(79)
    examples = [
        (np.abs(rng.normal(size=FEATURE_DIM)), bool(i % 2)) for i in range(40)
    ]
    model = train(examples, epochs=300)
    for before, after in zip(model.losses, model.losses[1:]):
        assert after <= before + 1e-12


# --- prediction ------------------------------------------------------------------

def test_predict_zero_model_gives_half():
    model = train(separable_points(), epochs=1)
    zero = model.__class__(weights=np.zeros(FEATURE_DIM), bias=0.0)
    assert predict(zero, np.ones(FEATURE_DIM)) == 0.5


def test_predict_monotone_in_positive_weight():
    weights = np.zeros(FEATURE_DIM)
    weights[0] = 1.5
    model = train(separable_points(), epochs=1).__class__(weights=weights, bias=0.0)
    x_low, x_high = np.zeros(FEATURE_DIM), np.zeros(FEATURE_DIM)
    x_low[0], x_high[0] = 0.2, 0.9
    assert predict(model, x_low) < predict(model, x_high)


def test_predict_matches_scalar_formula():
    rng = random.Random(83)
    model_cls = train(separable_points(), epochs=1).__class__
    for _ in range(100):
        weights = np.array([rng.uniform(-3, 3) for _ in range(FEATURE_DIM)])
        bias = rng.uniform(-3, 3)
        x = np.array([rng.uniform(-2, 2) for _ in range(FEATURE_DIM)])
        model = model_cls(weights=weights, bias=bias)
        z = sum(w * v for w, v in zip(weights, x)) + bias
        expected = 1.0 / (1.0 + math.exp(-z))
        assert abs(predict(model, x) - expected) < 1e-9
        assert 0.0 < predict(model, x) < 1.0


# --- model file ---------------------------------------------------------------------

def test_model_save_load_round_trip(tmp_path):
    model = train(separable_points(), epochs=20)
    path = tmp_path / "model.json"
    save_model(model, path)
    loaded = load_model(path)
    assert np.allclose(loaded.weights, model.weights)
    assert loaded.bias == pytest.approx(model.bias)


def test_model_load_rejects_bad_files(tmp_path):
    path = tmp_path / "model.json"
    path.write_text('{"weights": [1, 2], "bias": 0.0, "feature_version": 1}')
    with pytest.raises(DataFormatError, match="expected 8 weights"):
        load_model(path)
    path.write_text('{"weights": [0,0,0,0,0,0,0,0], "bias": 0.0, "feature_version": 9}')
    with pytest.raises(DataFormatError, match="feature_version"):
        load_model(path)


# --- threshold sweep ------------------------------------------------------------------

def test_perfect_scorer_reaches_precision_and_recall_one():
    scores = [(0.9, True), (0.8, True), (0.2, False), (0.1, False)]
    points = sweep_thresholds(scores)
    assert any(p.precision == 1.0 and p.recall == 1.0 for p in points)


def test_recall_nonincreasing_in_threshold():
    rng = random.Random(89)
    scores = [(rng.random(), rng.random() < 0.4) for _ in range(200)]
    scores[0] = (0.5, True)
    points = sweep_thresholds(scores)
    thresholds = [p.threshold for p in points]
    assert thresholds == sorted(thresholds)
    recalls = [p.recall for p in points]
    assert all(b <= a for a, b in zip(recalls, recalls[1:]))


def test_sweep_matches_confusion_matrix_oracle():
    rng = random.Random(97)
    scores = [(round(rng.random(), 2), rng.random() < 0.3) for _ in range(200)]
    scores[0] = (0.5, True)
    points = sweep_thresholds(scores)
    positives = sum(1 for _, label in scores if label)
    for point in points:
        tp = fp = 0
        for score, label in scores:
            if score >= point.threshold:
                tp += label
                fp += not label
        expected_precision = 1.0 if tp + fp == 0 else tp / (tp + fp)
        assert point.precision == pytest.approx(expected_precision, abs=1e-12)
        assert point.recall == pytest.approx(tp / positives, abs=1e-12)


def test_predicted_set_nesting_across_thresholds():
    rng = random.Random(101)
    scores = [(rng.random(), rng.random() < 0.5) for _ in range(100)]
    scores[0] = (0.9, True)
    thresholds = sorted({s for s, _ in scores})
    previous = None
    for threshold in thresholds:
        current = {i for i, (s, _) in enumerate(scores) if s >= threshold}
        if previous is not None:
            assert current <= previous
        previous = current


def test_sweep_errors():
    with pytest.raises(ValueError, match="positive"):
        sweep_thresholds([(0.5, False)])
    with pytest.raises(ValueError, match="no scores"):
        sweep_thresholds([])
    with pytest.raises(ValueError, match="outside"):
        sweep_thresholds([(1.5, True)])


def test_pr_csv_format(tmp_path):
    path = tmp_path / "pr.csv"
    write_pr_csv([PRPoint(0.0, 1.0, 0.5)], path)
    assert path.read_text() == "threshold,precision,recall\n0.0,1.0,0.5\n"
