import unittest
import sys
import os

import numpy as np

# Add the parent directory to the path so we can import the fairstitch modules
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from fairstitch.diffcore import (
    GradTape,
    Tensor,
    abs_scalar,
    affine,
    backward,
    constant,
    cross_entropy,
    finite_diff_check,
    masked_mean,
    matmul,
    max_scalar,
    per_row_cross_entropy,
    relu,
    softmax_probs,
    sum_of_squares,
    weighted_sum,
)
from fairstitch.errors import ContractError, EmptyGroupError, ShapeError
from fairstitch.fairloss import BatchContext, ConstraintKind, FairnessConstraint, composite_objective

DIMS = [4, 5, 3, 2]
MARGIN = 1e-3


def _batch(rng, rows_per_cell=3):
    cells = [(0, 0), (0, 1), (1, 0), (1, 1)] * rows_per_cell
    y = np.array([c[0] for c in cells])
    a = np.array([c[1] for c in cells])
    x = rng.normal(size=(len(cells), DIMS[0]))
    return x, y, a


def _random_params(rng):
    arrays = []
    for fan_in, fan_out in zip(DIMS[:-1], DIMS[1:]):
        arrays.append(rng.normal(scale=0.8, size=(fan_in, fan_out)))
        arrays.append(rng.normal(scale=0.3, size=(1, fan_out)))
    return arrays


def _logits(tensors, x):
    h = Tensor(x)
    n_layers = len(tensors) // 2
    for i in range(n_layers):
        h = affine(h, tensors[2 * i], tensors[2 * i + 1])
        if i < n_layers - 1:
            h = relu(h)
    return h


def _near_kink(arrays, x, y, a):
    """True when a relu pre-activation, an absolute-value gap or a cell-loss tie is within MARGIN."""
    h = x
    n_layers = len(arrays) // 2
    for i in range(n_layers):
        z = h @ arrays[2 * i] + arrays[2 * i + 1]
        if i < n_layers - 1:
            if np.min(np.abs(z)) < MARGIN:
                return True
            h = np.maximum(z, 0.0)
    logits = z
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    p = np.exp(log_probs[:, 1])

    def gap(values):
        return abs(values[a == 1].mean() - values[a == 0].mean())

    gaps = [gap(p * (1 - y)), gap((1 - p) * y), gap(p * (1 - y) + (1 - p) * y)]
    for label in (0, 1):
        cell = y == label
        gaps.append(abs(p[cell & (a == 1)].mean() - p[cell & (a == 0)].mean()))
    if min(gaps) < MARGIN:
        return True
    ce = -log_probs[np.arange(len(y)), y]
    cell_losses = sorted(ce[(y == cy) & (a == ca)].mean() for cy, ca in ((0, 0), (0, 1), (1, 0), (1, 1)))
    return cell_losses[-1] - cell_losses[-2] < MARGIN


class TestForwardOps(unittest.TestCase):
    def test_matmul(self):
        a = constant([[1, 2], [3, 4]])
        self.assertTrue(np.array_equal(matmul(constant(np.eye(2)), a).data, a.data))
        self.assertTrue(np.array_equal(matmul(a, constant([[5, 6], [7, 8]])).data, [[19, 22], [43, 50]]))
        self.assertTrue(np.array_equal(matmul(a, constant(np.zeros((2, 3)))).data, np.zeros((2, 3))))

    def test_matmul_shape_error(self):
        with self.assertRaises(ShapeError) as ctx:
            matmul(constant(np.ones((2, 3))), constant(np.ones((2, 3))))
        self.assertIn("(2, 3)", str(ctx.exception))

    def test_affine(self):
        self.assertTrue(np.array_equal(affine(constant([[1, 1]]), constant(np.eye(2)), constant([0, 0])).data,
                                       [[1, 1]]))
        self.assertEqual(affine(constant([[1, 2]]), constant([[1], [1]]), constant([3])).item(), 6.0)
        out = affine(constant(np.zeros((3, 2))), constant([[1, 2], [3, 4]]), constant([5, -1]))
        self.assertTrue(np.array_equal(out.data, np.tile([[5, -1]], (3, 1))))

    def test_relu(self):
        self.assertTrue(np.array_equal(relu(constant([[-1, 0, 2]])).data, [[0, 0, 2]]))
        x = constant([[0.5, 3.0]])
        self.assertTrue(np.array_equal(relu(x).data, x.data))

    def test_softmax_probs(self):
        self.assertEqual(softmax_probs(constant([[0, 0]])).item(), 0.5)
        self.assertAlmostEqual(softmax_probs(constant([[0, np.log(3)]])).item(), 0.75, places=12)
        self.assertEqual(softmax_probs(constant([[1000, 1000]])).item(), 0.5)

    def test_cross_entropy(self):
        self.assertAlmostEqual(cross_entropy(constant([[0, 0]]), [1]).item(), np.log(2), places=12)
        self.assertLess(cross_entropy(constant([[0, 20]]), [1]).item(), 1e-6)
        logits = constant([[0.3, -1.0], [2.0, 0.5]])
        self.assertAlmostEqual(cross_entropy(logits, [0, 1]).item(),
                               per_row_cross_entropy(logits, [0, 1]).data.mean(), places=14)

    def test_cross_entropy_needs_two_columns(self):
        for loss in (cross_entropy, per_row_cross_entropy):
            with self.subTest(loss=loss.__name__):
                with self.assertRaises(ShapeError):
                    loss(constant(np.zeros((2, 3))), [0, 1])

    def test_masked_mean(self):
        v = constant([[1], [2], [3]])
        self.assertEqual(masked_mean(v, [1, 1, 0]).item(), 1.5)
        self.assertEqual(masked_mean(v, [1, 1, 1]).item(), 2.0)
        with self.assertRaises(EmptyGroupError):
            masked_mean(v, [0, 0, 0])

    def test_scalar_ops(self):
        self.assertEqual(abs_scalar(constant(-0.3)).item(), 0.3)
        self.assertEqual(weighted_sum([constant(0.5), constant(0.1)], [1, 20]).item(), 2.5)

        tape = GradTape()
        scalars = [tape.variable(v, name=f"s{i}") for i, v in enumerate((0.2, 0.7, 0.7))]
        top = max_scalar(scalars)
        self.assertEqual(top.item(), 0.7)
        grads = backward(tape, top)
        self.assertEqual([grads[f"s{i}"].item() for i in range(3)], [0.0, 1.0, 0.0])


class TestBackward(unittest.TestCase):
    def test_constant_root_gives_zero_gradients(self):
        tape = GradTape()
        tape.variable([[1.0, 2.0]], name="x")
        grads = backward(tape, constant(3.0))
        self.assertTrue(np.array_equal(grads["x"], [[0.0, 0.0]]))

    def test_sum_of_squares(self):
        tape = GradTape()
        x = tape.variable([[1.0, 2.0]], name="x")
        grads = backward(tape, sum_of_squares(x))
        self.assertTrue(np.array_equal(grads["x"], [[2.0, 4.0]]))

    def test_unused_leaf_is_zero_filled(self):
        tape = GradTape()
        x = tape.variable([[1.0]], name="x")
        tape.variable([[5.0, 6.0]], name="unused")
        grads = backward(tape, sum_of_squares(x))
        self.assertTrue(np.array_equal(grads["unused"], np.zeros((1, 2))))

    def test_non_scalar_root(self):
        tape = GradTape()
        x = tape.variable([[1.0, 2.0]], name="x")
        with self.assertRaises(ContractError):
            backward(tape, relu(x))

    def test_duplicate_leaf_name(self):
        tape = GradTape()
        tape.variable([[1.0]], name="w")
        with self.assertRaises(ContractError):
            tape.variable([[2.0]], name="w")


class TestGradientSuite(unittest.TestCase):
    def test_quadratic(self):
        report = finite_diff_check(lambda t: sum_of_squares(t[0]), [np.array([[0.5, -1.5, 2.0]])], h=1e-6)
        self.assertLess(report.max_rel_error, 1e-6)

    def test_relu_against_finite_differences(self):
        report = finite_diff_check(lambda t: sum_of_squares(relu(t[0])), [np.array([[-1.0, 2.0]])], h=1e-6)
        self.assertTrue(report.passed)

    def test_cross_entropy_logits(self):
        rng = np.random.default_rng(3)
        logits = rng.normal(size=(4, 2))
        y = np.array([0, 1, 1, 0])
        report = finite_diff_check(lambda t: cross_entropy(t[0], y), [logits], h=1e-5)
        self.assertLess(report.max_rel_error, 1e-5)

    def test_objectives_on_random_networks(self):
        objectives = {
            "ce": FairnessConstraint(),
            "eo": FairnessConstraint(ConstraintKind.EO, 20.0),
            "eo_conditional": FairnessConstraint(ConstraintKind.EO, 20.0, "conditional"),
            "ae": FairnessConstraint(ConstraintKind.AE, 20.0),
            "mmf": FairnessConstraint(ConstraintKind.MMF, 1.0),
        }
        checked = 0
        for seed in range(300):
            rng = np.random.default_rng(seed)
            x, y, a = _batch(rng)
            arrays = _random_params(rng)
            if _near_kink(arrays, x, y, a):
                continue
            checked += 1
            for name, constraint in objectives.items():
                def objective(tensors, constraint=constraint):
                    logits = _logits(tensors, x)
                    return composite_objective(logits, BatchContext.from_logits(logits, y, a), constraint)

                report = finite_diff_check(objective, arrays, h=1e-5, tol=1e-5, denominator_floor=1e-3)
                self.assertTrue(report.passed, f"seed {seed} {name}: rel error {report.max_rel_error:.3e}")
            if checked == 100:
                break
        self.assertEqual(checked, 100)


if __name__ == '__main__':
    unittest.main()
