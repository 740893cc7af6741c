import numpy as np
from django.core.exceptions import ValidationError
from django.test import SimpleTestCase

from Master.seed_generator import derive_seed, rng_for
from Master.validators import (
    CheckpointChecksumError, CheckpointError, ContractViolation, NonFiniteValue, require, require_finite,
    require_shape, require_symmetric,
)


class ContractViolationTests(SimpleTestCase):
    def test_is_a_validation_error_with_code(self):
        with self.assertRaises(ValidationError) as caught:
            require(False, "%(n)s is too small.", code='too_small', n=3)
        self.assertEqual(caught.exception.code, 'too_small')
        self.assertEqual(str(caught.exception), "3 is too small.")

    def test_checkpoint_errors_share_a_base(self):
        error = CheckpointChecksumError("bad payload")
        self.assertIsInstance(error, CheckpointError)
        self.assertEqual(error.code, 'checkpoint_checksum')

    def test_shape_wildcards(self):
        require_shape(np.zeros((2, 5)), (2, None), "x")
        with self.assertRaises(ContractViolation) as caught:
            require_shape(np.zeros((2, 5)), (3, None), "x")
        self.assertIn("(2, 5)", str(caught.exception))

    def test_finite_and_symmetric(self):
        with self.assertRaises(NonFiniteValue):
            require_finite(np.array([1.0, np.nan]), "x")
        require_symmetric(np.eye(3), "m")
        with self.assertRaises(ContractViolation):
            require_symmetric(np.array([[1.0, 0.2], [0.1, 1.0]]), "m")
        with self.assertRaises(ContractViolation):
            require_symmetric(np.zeros((2, 3)), "m")


class SeedTests(SimpleTestCase):
    def test_derivation_is_stable_and_key_sensitive(self):
        self.assertEqual(derive_seed(7, 'train', 1), derive_seed(7, 'train', 1))
        seeds = {derive_seed(7, 'train', 0), derive_seed(7, 'train', 1), derive_seed(7, 'folds'), derive_seed(8, 'folds')}
        self.assertEqual(len(seeds), 4)

    def test_generators_repeat(self):
        np.testing.assert_array_equal(rng_for(3, 'subject', 2).random(4), rng_for(3, 'subject', 2).random(4))
