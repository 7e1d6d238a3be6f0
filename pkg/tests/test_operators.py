"""Discretized integral operators: composition, resolvents, spectra."""

import numpy as np
import pytest

from vmk import (
    ConstantKernel,
    DiagonalKernel,
    ExponentialKernel,
    FractionalKernel,
    InvalidArgumentError,
    SingularOperatorError,
    TableKernel,
    invert_id_minus,
    kernel_operator,
    make_grid,
    resolvent,
    star,
)
from vmk.operators import (
    IntegralOperator,
    adjoint,
    discretize,
    eig_sym,
    full_matrix,
    identity_operator,
    kernel_value,
    l2_inner,
    op_apply,
    op_frobenius_sq,
    op_trace,
)


def random_instance(rng):
    horizon = float(rng.uniform(0.5, 2.0))
    n = int(rng.integers(20, 60))
    grid = make_grid(horizon, n)
    kind = rng.integers(0, 5)
    if kind == 0:
        kern = FractionalKernel(float(rng.uniform(0.1, 1.0)), scale=float(rng.uniform(0.2, 1.0)))
    elif kind == 1:
        kern = ExponentialKernel(beta=float(rng.uniform(0.0, 3.0)), scale=float(rng.uniform(0.2, 1.0)))
    elif kind == 2:
        N = int(rng.integers(1, 4))
        kern = ConstantKernel(rng.standard_normal((N, N)) * 0.5, volterra=bool(rng.integers(0, 2)))
    elif kind == 3:
        parts = [
            FractionalKernel(float(rng.uniform(0.1, 1.0))),
            ExponentialKernel(beta=float(rng.uniform(0.0, 2.0))),
        ]
        kern = DiagonalKernel(parts[: int(rng.integers(1, 3))])
    else:
        vals = rng.standard_normal((n, n)) * 0.5
        kern = TableKernel(grid, vals, volterra=bool(rng.integers(0, 2)))
    return discretize(kern, grid)


class TestResolventIdentities:
    def test_random_instance_suite(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            a = random_instance(rng)
            r = resolvent(a)
            fixed_point = np.max(np.abs(r.kernel - a.kernel - a.kernel @ r.kernel))
            assert fixed_point <= 1e-10

            inv = invert_id_minus(a)
            id_minus = IntegralOperator(a.grid, a.dim, -a.kernel, np.eye(a.dim))
            prod = star(id_minus, inv)
            assert np.max(np.abs(prod.kernel)) <= 1e-10
            np.testing.assert_allclose(prod.ident, np.eye(a.dim), atol=1e-14)

            commut = np.max(np.abs(a.kernel @ r.kernel - r.kernel @ a.kernel))
            assert commut <= 1e-10

    def test_resolvent_matches_neumann_series(self):
        grid = make_grid(1.0, 25)
        a = discretize(ConstantKernel(np.array([[0.05]])), grid)
        r = resolvent(a)
        series = np.zeros_like(a.kernel)
        power = np.eye(a.kernel.shape[0])
        for _ in range(9):
            power = power @ a.kernel
            series = series + power
        np.testing.assert_allclose(r.kernel, series, atol=1e-12)

    def test_unit_kernel_resolvent_exponential_growth(self):
        # x = 1 + int_0^t x solved through (Id + R) tends to exp(t)
        grid = make_grid(1.0, 400)
        a = discretize(ConstantKernel(np.array([[1.0]])), grid)
        r = resolvent(a)
        ones = np.ones(grid.n)
        x = ones + op_apply(r, ones)
        np.testing.assert_allclose(x, np.exp(grid.left_nodes), rtol=6e-3)

    @pytest.mark.filterwarnings("ignore::scipy.linalg.LinAlgWarning")
    def test_singular_case_raises(self):
        grid = make_grid(1.0, 10)
        a = kernel_operator(grid, 1, np.eye(10))
        with pytest.raises(SingularOperatorError):
            resolvent(a)

    def test_resolvent_needs_pure_kernel(self):
        grid = make_grid(1.0, 10)
        op = identity_operator(grid, 2)
        with pytest.raises(InvalidArgumentError):
            resolvent(op)


class TestAlgebra:
    def test_apply_matches_full_matrix(self):
        rng = np.random.default_rng(3)
        grid = make_grid(1.5, 12)
        op = IntegralOperator(grid, 2, rng.standard_normal((24, 24)), rng.standard_normal((2, 2)))
        f = rng.standard_normal((12, 2))
        got = op_apply(op, f).reshape(-1)
        want = full_matrix(op) @ f.reshape(-1)
        np.testing.assert_allclose(got, want, rtol=1e-13)

    def test_adjoint_moves_across_inner_product(self):
        rng = np.random.default_rng(11)
        grid = make_grid(2.0, 15)
        op = IntegralOperator(grid, 2, rng.standard_normal((30, 30)), rng.standard_normal((2, 2)))
        f = rng.standard_normal((15, 2))
        g = rng.standard_normal((15, 2))
        lhs = l2_inner(grid, f, op_apply(op, g))
        rhs = l2_inner(grid, op_apply(adjoint(op), f), g)
        assert lhs == pytest.approx(rhs, rel=1e-12)

    def test_adjoint_reverses_composition(self):
        rng = np.random.default_rng(13)
        grid = make_grid(1.0, 10)
        a = IntegralOperator(grid, 1, rng.standard_normal((10, 10)), rng.standard_normal((1, 1)))
        b = IntegralOperator(grid, 1, rng.standard_normal((10, 10)), rng.standard_normal((1, 1)))
        lhs = adjoint(star(a, b))
        rhs = star(adjoint(b), adjoint(a))
        np.testing.assert_allclose(lhs.kernel, rhs.kernel, rtol=1e-12)
        np.testing.assert_allclose(lhs.ident, rhs.ident, rtol=1e-12)

    def test_star_associative(self):
        rng = np.random.default_rng(17)
        grid = make_grid(1.0, 8)
        ops = [
            IntegralOperator(grid, 1, rng.standard_normal((8, 8)), rng.standard_normal((1, 1)))
            for _ in range(3)
        ]
        lhs = star(star(ops[0], ops[1]), ops[2])
        rhs = star(ops[0], star(ops[1], ops[2]))
        np.testing.assert_allclose(lhs.kernel, rhs.kernel, atol=1e-12)
        np.testing.assert_allclose(lhs.ident, rhs.ident, atol=1e-12)

    def test_identity_operator_neutral(self):
        grid = make_grid(1.0, 9)
        a = discretize(FractionalKernel(0.3), grid)
        ident = identity_operator(grid, 1)
        left = star(ident, a)
        right = star(a, ident)
        np.testing.assert_allclose(left.kernel, a.kernel, atol=1e-14)
        np.testing.assert_allclose(right.kernel, a.kernel, atol=1e-14)

    def test_trace_and_frobenius_constant_kernel(self):
        grid = make_grid(2.0, 16)
        m = np.array([[1.0, 0.5], [0.5, 3.0]])
        op = discretize(ConstantKernel(m, volterra=False), grid)
        assert op_trace(op) == pytest.approx(2.0 * np.trace(m), rel=1e-13)
        want = np.sum(m * m) * grid.dt**2 * 16 * 16
        assert op_frobenius_sq(op) == pytest.approx(want, rel=1e-13)

    def test_kernel_value_recovers_density(self):
        grid = make_grid(1.0, 20)
        op = discretize(ConstantKernel(np.array([[2.5]]), volterra=False), grid)
        assert kernel_value(op, 3, 17)[0, 0] == pytest.approx(2.5, rel=1e-13)


class TestSpectrum:
    def test_rank_one_kernel(self):
        grid = make_grid(1.0, 30)
        v = np.sin(np.pi * grid.left_nodes)
        vals = np.outer(v, v)
        op = discretize(TableKernel(grid, vals, volterra=False), grid)
        spec = eig_sym(op)
        lead = grid.dt * float(v @ v)
        assert spec.eigenvalues[0] == pytest.approx(lead, rel=1e-12)
        assert np.max(np.abs(spec.eigenvalues[1:])) < 1e-12 * lead
        fn = spec.functions[:, 0].reshape(-1)
        assert l2_inner(grid, fn, fn) == pytest.approx(1.0, rel=1e-12)
        unit = v / np.sqrt(grid.dt * float(v @ v))
        assert np.min(np.abs([np.max(fn - unit), np.max(fn + unit)])) < 1e-10

    def test_asymmetric_kernel_rejected(self):
        grid = make_grid(1.0, 10)
        op = discretize(ConstantKernel(np.array([[1.0]]), volterra=True), grid)
        with pytest.raises(InvalidArgumentError):
            eig_sym(op)
