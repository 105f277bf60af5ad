"""The named finite-difference checks behind ``gradcheck``."""

import pytest

from src.services.self_checks import GRADCHECK_TOLERANCE, REGISTRY, run_checks


@pytest.mark.parametrize("module", sorted(REGISTRY))
def test_group_passes(module):
    results = run_checks(module, seed=0)
    assert results
    for name, error in results.items():
        assert name.startswith(f"{module}.")
        assert error <= GRADCHECK_TOLERANCE, name


def test_seed_changes_nothing_structural():
    assert set(run_checks("matching_losses", seed=1)) == set(run_checks("matching_losses", seed=2))


def test_unknown_module():
    with pytest.raises(KeyError):
        run_checks("tokenizer")
