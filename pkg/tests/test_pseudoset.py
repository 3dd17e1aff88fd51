import numpy as np
import pytest

from imuda.errors import InsufficientConfidenceError
from imuda.gmm import GmmModel
from imuda.ndcore import make_rng
from imuda.netcore import Layer, NetworkParams, forward_classifier
from imuda.pseudoset import generate


def toy_classifier(weight, bias=None):
    weight = np.asarray(weight, dtype=float)
    f, k = weight.shape
    return NetworkParams([Layer(np.eye(f), np.zeros(f), "linear")],
                         [Layer(weight, np.zeros(k) if bias is None else np.asarray(bias, float), "softmax")])


SEPARATING = [[1.0, -1.0], [1.0, -1.0]]  # logit gap 2 * (z1 + z2) in favour of class 0


def separated_gmm(spread=0.1):
    return GmmModel.from_components([0.5, 0.5], [[3.0, 3.0], [-3.0, -3.0]], [spread * np.eye(2)] * 2)


def overlapping_gmm():
    return GmmModel.from_components([0.5, 0.5], [[0.5, 0.5], [-0.5, -0.5]], [np.eye(2)] * 2)


def test_vacuous_threshold_accepts_everything():
    p = generate(overlapping_gmm(), toy_classifier(SEPARATING), 1e-12, 300, make_rng(0))
    assert len(p) == 300 and p.attempted == 300
    assert p.acceptance_rate == 1.0


def test_uniform_classifier_raises():
    clf = toy_classifier(np.zeros((2, 3)))
    gmm = GmmModel.from_components([0.3, 0.3, 0.4], [[0, 0], [1, 1], [2, 2]], [np.eye(2)] * 3)
    with pytest.raises(InsufficientConfidenceError) as info:
        generate(gmm, clf, 0.5, 100, make_rng(0))
    assert info.value.acceptance_rate == 0.0
    assert info.value.per_class == [0, 0, 0]


def test_separated_toy_labels_follow_components():
    p = generate(separated_gmm(), toy_classifier(SEPARATING), 0.95, 1000, make_rng(3))
    assert p.acceptance_rate > 0.5
    assert np.mean(np.argmax(p.labels, axis=1) == p.components) > 0.99


def _check_contract(p, clf, tau):
    probs = forward_classifier(clf, p.samples)
    np.testing.assert_array_equal(np.argmax(probs, axis=1), np.argmax(p.labels, axis=1))
    assert np.all(p.confidences > tau)
    assert np.all(np.max(probs, axis=1) > tau)
    assert np.array_equal(p.labels.sum(axis=1), np.ones(len(p)))


@pytest.mark.parametrize("tau", [0.5, 0.7, 0.9, 0.99])
def test_reclassification_reproduces_labels(tau):
    clf = toy_classifier(SEPARATING)
    p = generate(overlapping_gmm(), clf, tau, 500, make_rng(5))
    _check_contract(p, clf, tau)
    assert 0 < p.acceptance_rate <= 1


def test_threshold_monotonicity_under_shared_draws():
    clf = toy_classifier(SEPARATING)
    kw = dict(target_count=3000, max_draws=3000)
    low = generate(overlapping_gmm(), clf, 0.6, rng=make_rng(8), **kw)
    high = generate(overlapping_gmm(), clf, 0.9, rng=make_rng(8), **kw)
    assert len(high) < len(low)
    assert set(high.draw_index.tolist()) <= set(low.draw_index.tolist())


def test_stops_at_target_count_and_is_deterministic():
    clf = toy_classifier(SEPARATING)
    a = generate(overlapping_gmm(), clf, 0.8, 200, make_rng(1))
    b = generate(overlapping_gmm(), clf, 0.8, 200, make_rng(1))
    assert len(a) == 200
    assert a.attempted == a.draw_index[-1] + 1
    assert a.acceptance_rate == 200 / a.attempted
    for name in ("samples", "labels", "confidences", "draw_index"):
        assert np.array_equal(getattr(a, name), getattr(b, name))


def test_invalid_tau():
    with pytest.raises(ValueError):
        generate(separated_gmm(), toy_classifier(SEPARATING), 1.0, 10, make_rng(0))
