import numpy as np
import pytest

from scfp import (
    ExpressionMatrix,
    KnownMask,
    Mode,
    ScfpConfig,
    derive_known_mask,
    validate,
)


class TestExpressionMatrix:
    def test_defaults_ids(self):
        x = ExpressionMatrix([[1.0, 2.0], [3.0, 4.0]])
        assert x.cell_ids == ["cell_0", "cell_1"]
        assert x.gene_ids == ["gene_0", "gene_1"]
        assert x.shape == (2, 2)

    def test_rejects_non_2d(self):
        with pytest.raises(ValueError):
            ExpressionMatrix([1.0, 2.0])

    def test_rejects_empty(self):
        with pytest.raises(ValueError):
            ExpressionMatrix(np.zeros((0, 3)))

    def test_values_are_frozen(self):
        x = ExpressionMatrix([[1.0]])
        with pytest.raises(ValueError):
            x.values[0, 0] = 5.0

    def test_construction_copies_source(self):
        source = np.array([[1.0, 2.0]])
        x = ExpressionMatrix(source)
        source[0, 0] = 99.0
        assert x.values[0, 0] == 1.0


class TestValidate:
    def test_valid_matrix_ok(self):
        assert validate(ExpressionMatrix([[1.0, 2.0], [3.0, 4.0]])).ok

    def test_negative_entry_located(self):
        result = validate(ExpressionMatrix([[-1.0, 2.0], [3.0, 4.0]]))
        assert not result.ok
        v = result.violations[0]
        assert v.kind == "negative entry" and (v.row, v.col) == (0, 0)

    def test_nan_entry_located(self):
        result = validate(ExpressionMatrix([[1.0, 2.0], [3.0, np.nan]]))
        assert not result.ok
        v = result.violations[0]
        assert v.kind == "non-finite entry" and (v.row, v.col) == (1, 1)

    def test_id_length_mismatch(self):
        x = ExpressionMatrix([[1.0, 2.0]], cell_ids=["a", "b"], gene_ids=["g1", "g2"])
        result = validate(x)
        assert any(v.kind == "dimension mismatch" for v in result.violations)

    def test_raise_if_invalid(self):
        result = validate(ExpressionMatrix([[-1.0]]))
        with pytest.raises(Exception, match="negative"):
            result.raise_if_invalid()


class TestDeriveKnownMask:
    def test_definition(self):
        mask = derive_known_mask(ExpressionMatrix([[1.0, 0.0], [0.0, 2.0]]))
        assert mask.mask.tolist() == [[True, False], [False, True]]

    def test_all_zero(self):
        mask = derive_known_mask(ExpressionMatrix(np.zeros((2, 2))))
        assert not mask.mask.any()

    def test_mixed_row(self):
        mask = derive_known_mask(ExpressionMatrix([[0.5, 3.0], [0.0, 0.0]]))
        assert mask.mask.tolist() == [[True, True], [False, False]]

    def test_idempotent_and_pure(self, rng):
        x = ExpressionMatrix(rng.integers(0, 3, (6, 5)).astype(float))
        first = derive_known_mask(x)
        second = derive_known_mask(x)
        assert np.array_equal(first.mask, second.mask)

    def test_true_count_equals_nnz(self, rng):
        for _ in range(20):
            values = rng.integers(0, 2, (5, 7)).astype(float) * rng.random((5, 7))
            x = ExpressionMatrix(values)
            assert derive_known_mask(x).known_count() == np.count_nonzero(x.values)

    def test_snapshot_is_independent(self):
        source = np.array([[1.0, 0.0]])
        x = ExpressionMatrix(source)
        mask = derive_known_mask(x)
        source[0, 1] = 7.0
        assert mask.mask.tolist() == [[True, False]]


class TestKnownMask:
    def test_frozen(self):
        mask = KnownMask(np.array([[True, False]]))
        with pytest.raises(ValueError):
            mask.mask[0, 0] = False


class TestScfpConfig:
    def test_defaults(self):
        config = ScfpConfig()
        assert config.k == 15
        assert config.alpha == 0.99
        assert config.hard_iterations == 40
        assert config.soft_iterations == 40
        assert config.convergence_tolerance == 0.0
        assert config.mode is Mode.FULL

    @pytest.mark.parametrize("alpha", [0.0, 1.0, -0.3, 1.5])
    def test_alpha_range(self, alpha):
        with pytest.raises(ValueError):
            ScfpConfig(alpha=alpha)

    def test_iterations_positive(self):
        with pytest.raises(ValueError):
            ScfpConfig(hard_iterations=0)
        with pytest.raises(ValueError):
            ScfpConfig(soft_iterations=0)

    def test_tolerance_nonnegative(self):
        with pytest.raises(ValueError):
            ScfpConfig(convergence_tolerance=-1e-9)

    def test_mode_coercion_from_string(self):
        assert ScfpConfig(mode="hard_only").mode is Mode.HARD_ONLY
