"""
Grade Prediction Tests
"""
import numpy as np
import pytest

from app.core.exceptions import ConfigError, EmptyProfileError
from app.models.schemas import StudentQuery
from app.services.gradepred import (
    BiasPredictor,
    KnowledgeData,
    KnowledgeModel,
    KnowledgePredictor,
    fit_bias_baseline,
    fit_knowledge,
    knowledge_gradients,
    knowledge_loss,
    knowledge_state,
    predict_grade,
)


@pytest.fixture
def hand_model():
    """Fixture for a k=2 model over three courses"""
    provided = np.array([[1.0, 0.0], [0.0, 2.0], [1.0, 1.0]])
    required = np.array([[0.5, 0.5], [1.0, 0.0], [0.0, -1.0]])
    return KnowledgeModel(provided, required, 2.5, ["a", "b", "c"])


def _graded_instance(make_instance, priors, targets, student):
    return make_instance(
        context=[c for c, p in priors if p > 1.5] or [priors[0][0]],
        student=student,
        prior_grades=tuple(priors),
        target_grades=tuple(targets),
    )


class TestKnowledgeState:
    """Test knowledge-state aggregation"""

    def test_single_prior(self, hand_model):
        np.testing.assert_array_equal(knowledge_state(hand_model, [("b", 4.0)]), [0.0, 8.0])

    def test_failed_course_adds_nothing(self, hand_model):
        state = knowledge_state(hand_model, [("a", 3.0), ("b", 0.0)])
        np.testing.assert_array_equal(state, [3.0, 0.0])

    def test_weighted_sum(self, hand_model):
        priors = [("a", 4.0), ("b", 3.0), ("c", 2.0)]
        expected = 4.0 * hand_model.provided[0] + 3.0 * hand_model.provided[1] + 2.0 * hand_model.provided[2]
        np.testing.assert_allclose(knowledge_state(hand_model, priors), expected)

    def test_no_priors(self, hand_model):
        with pytest.raises(EmptyProfileError):
            knowledge_state(hand_model, [])


class TestPredictGrade:
    """Test grade prediction"""

    def test_zero_model_predicts_bias(self):
        model = KnowledgeModel(np.zeros((2, 3)), np.zeros((2, 3)), 2.8, ["a", "b"])
        state = knowledge_state(model, [("a", 4.0)])
        assert predict_grade(model, state, "b").predicted == pytest.approx(2.8)

    def test_orthogonal_state(self, hand_model):
        assert predict_grade(hand_model, np.array([0.0, 5.0]), "b").predicted == pytest.approx(2.5)

    def test_hand_value(self, hand_model):
        state = knowledge_state(hand_model, [("a", 4.0), ("c", 2.0)])  # (6, 2)
        assert predict_grade(hand_model, state, "a").predicted == pytest.approx(6.5)
        assert predict_grade(hand_model, state, "c").predicted == pytest.approx(0.5)

    def test_linear_in_state(self, hand_model):
        state = np.array([0.3, -1.2])
        base = predict_grade(hand_model, state, "a").predicted - hand_model.bias
        scaled = predict_grade(hand_model, 2.5 * state, "a").predicted - hand_model.bias
        assert scaled == pytest.approx(2.5 * base)

    def test_unknown_course_falls_back(self, hand_model):
        prediction = predict_grade(hand_model, np.zeros(2), "zz", student="s1")
        assert prediction.fallback
        assert prediction.predicted == hand_model.bias

    def test_unknown_course_uses_bias_baseline(self):
        baseline = fit_bias_baseline([("s1", "zz", 4.0), ("s2", "zz", 3.0)])
        model = KnowledgeModel(np.zeros((1, 2)), np.zeros((1, 2)), 1.0, ["a"], fallback=baseline)
        prediction = predict_grade(model, np.zeros(2), "zz", student="s1")
        assert prediction.fallback
        assert prediction.predicted == pytest.approx(baseline.predict("s1", "zz"))


class TestFitKnowledge:
    """Test knowledge-model fitting"""

    def test_gradients_match_finite_differences(self, make_instance):
        rng = np.random.default_rng(0)
        courses = [f"c{i}" for i in range(10)]
        instances = []
        for s in range(12):
            picks = rng.choice(10, size=4, replace=False)
            priors = [(courses[i], float(rng.choice([2.0, 3.0, 4.0]))) for i in picks[:3]]
            instances.append(_graded_instance(make_instance, priors, [(courses[picks[3]], 3.333)], f"s{s}"))
        data = KnowledgeData.from_instances(instances, {c: i for i, c in enumerate(courses)})
        params = {
            "provided": rng.normal(size=(10, 3)),
            "required": rng.normal(size=(10, 3)),
            "bias": np.array([2.0]),
        }
        grads = knowledge_gradients(params, data, l2=0.01)
        eps = 1e-5
        for name, array in params.items():
            numeric = np.zeros_like(array)
            for idx in np.ndindex(array.shape):
                saved = array[idx]
                array[idx] = saved + eps
                up = knowledge_loss(params, data, 0.01)
                array[idx] = saved - eps
                down = knowledge_loss(params, data, 0.01)
                array[idx] = saved
                numeric[idx] = (up - down) / (2 * eps)
            assert np.linalg.norm(grads[name] - numeric) / np.linalg.norm(numeric) < 1e-4

    def test_constant_corpus(self, make_instance):
        instances = [
            _graded_instance(make_instance, [("a", 3.0), ("b", 3.0)], [("c", 3.0), ("d", 3.0)], f"s{i}")
            for i in range(10)
        ]
        model = fit_knowledge(instances, ["a", "b", "c", "d"], k=2, epochs=200, seed=1)
        assert model.bias == pytest.approx(3.0, abs=0.01)
        assert model.train_rmse < 0.01

    def test_planted_prerequisite(self, make_instance):
        """q is an A after p and a C otherwise"""
        instances = []
        for i in range(20):
            priors = [("x", 3.0), ("p", 3.0)] if i % 2 else [("x", 3.0)]
            instances.append(_graded_instance(make_instance, priors, [("q", 4.0 if i % 2 else 2.0)], f"s{i}"))
        model = fit_knowledge(instances, ["p", "q", "x"], k=2, epochs=400, learning_rate=0.01, l2=0.0, seed=3)
        with_p = predict_grade(model, knowledge_state(model, [("x", 3.0), ("p", 3.0)]), "q").predicted
        without_p = predict_grade(model, knowledge_state(model, [("x", 3.0)]), "q").predicted
        assert with_p > without_p

    @pytest.mark.parametrize("optimizer", ["lbfgs", "momentum"])
    def test_planted_prerequisite_either_optimizer(self, make_instance, optimizer):
        instances = []
        for i in range(20):
            priors = [("x", 3.0), ("p", 3.0)] if i % 2 else [("x", 3.0)]
            instances.append(_graded_instance(make_instance, priors, [("q", 4.0 if i % 2 else 2.0)], f"s{i}"))
        model = fit_knowledge(instances, ["p", "q", "x"], k=2, epochs=400, l2=0.0, seed=3, optimizer=optimizer)
        with_p = predict_grade(model, knowledge_state(model, [("x", 3.0), ("p", 3.0)]), "q").predicted
        without_p = predict_grade(model, knowledge_state(model, [("x", 3.0)]), "q").predicted
        assert with_p > without_p

    def test_lbfgs_fits_course_offsets_within_budget(self, make_instance):
        """Courses a point apart in difficulty are separated after 50 iterations"""
        instances = [
            _graded_instance(make_instance, [("a", 3.0), ("b", 3.0)], [("easy", 3.7), ("hard", 2.7)], f"s{i}")
            for i in range(30)
        ]
        courses = ["a", "b", "easy", "hard"]
        fast = fit_knowledge(instances, courses, k=3, epochs=50, seed=2, optimizer="lbfgs")
        slow = fit_knowledge(instances, courses, k=3, epochs=50, seed=2, optimizer="momentum")
        state = knowledge_state(fast, [("a", 3.0), ("b", 3.0)])
        gap = predict_grade(fast, state, "easy").predicted - predict_grade(fast, state, "hard").predicted
        assert gap > 0.8
        assert fast.train_rmse < slow.train_rmse

    def test_unknown_optimizer(self, make_instance):
        instances = [_graded_instance(make_instance, [("a", 3.0)], [("b", 3.0)], "s")]
        with pytest.raises(ConfigError):
            fit_knowledge(instances, ["a", "b"], k=2, optimizer="adam")

    def test_deterministic(self, make_instance):
        instances = [
            _graded_instance(make_instance, [("a", 4.0), ("b", 2.0)], [("c", 3.0)], f"s{i}") for i in range(4)
        ]
        first = fit_knowledge(instances, ["a", "b", "c"], k=2, epochs=20, seed=5)
        second = fit_knowledge(instances, ["a", "b", "c"], k=2, epochs=20, seed=5)
        np.testing.assert_array_equal(first.provided, second.provided)
        assert first.bias == second.bias

    def test_centered_weights(self, make_instance):
        instances = [
            _graded_instance(make_instance, [("a", 4.0), ("b", 2.0)], [("c", 3.0)], f"s{i}") for i in range(4)
        ]
        model = fit_knowledge(instances, ["a", "b", "c"], k=2, epochs=5, centered=True)
        assert model.weight_offset == pytest.approx(3.0)

    def test_no_grades(self):
        with pytest.raises(EmptyProfileError):
            fit_knowledge([], ["a"], k=2)


class TestBiasBaseline:
    """Test the shrunken bias predictor"""

    def test_two_observations(self):
        baseline = fit_bias_baseline([("s1", "c1", 4.0), ("s2", "c2", 2.0)])
        assert baseline.mu == pytest.approx(3.0)
        assert baseline.predict("s1", "c1") == pytest.approx(3.0 + 1 / 6 + 5 / 36)

    def test_unseen_pair_is_global_mean(self):
        baseline = fit_bias_baseline([("s1", "c1", 4.0), ("s2", "c2", 2.0)])
        assert baseline.predict("new", "other") == pytest.approx(3.0)

    def test_single_observation_bound(self):
        baseline = fit_bias_baseline([("s1", "c1", 3.0)])
        assert baseline.predict("s1", "c1") == pytest.approx(3.0)

    def test_strong_student(self):
        grades = [("top", c, 4.0) for c in "abcd"]
        grades += [(s, c, g) for s, g in (("x", 2.0), ("y", 3.0)) for c in "abcd"]
        baseline = fit_bias_baseline(grades)
        assert baseline.predict("top", "a") > baseline.mu
        assert baseline.predict("x", "a") < baseline.mu

    def test_predictions_stay_in_range(self):
        rng = np.random.default_rng(1)
        grades = [(f"s{rng.integers(5)}", f"c{rng.integers(6)}", float(rng.choice([0.0, 2.0, 4.0]))) for _ in range(60)]
        baseline = fit_bias_baseline(grades, lambda_b=0.0)
        low, high = min(g for *_, g in grades), max(g for *_, g in grades)
        for s, c, _ in grades:
            assert low - 1.0 <= baseline.predict(s, c) <= high + 1.0


class TestPredictors:
    """Test the predictor interface"""

    def test_knowledge_predictor(self, hand_model):
        query = StudentQuery(student="s", term=3, prior_grades=(("a", 4.0),))
        predictor = KnowledgePredictor(hand_model)
        assert predictor.name == "ckrm"
        assert predictor.predict(query, "b").predicted == pytest.approx(4.0 * 1.0 + 2.5)

    def test_bias_predictor_flags_unknown_courses(self):
        predictor = BiasPredictor(fit_bias_baseline([("s1", "c1", 4.0)]))
        query = StudentQuery(student="s1", term=2)
        assert not predictor.predict(query, "c1").fallback
        assert predictor.predict(query, "c9").fallback
