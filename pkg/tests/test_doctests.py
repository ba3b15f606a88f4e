import doctest

import pytest

import lsc.optim
import lsc.tasks


@pytest.mark.parametrize("module", [lsc.optim, lsc.tasks])
def test_module_doctests(module):
    result = doctest.testmod(module)
    assert result.attempted > 0 and result.failed == 0
