import pytest

from hartreelab.selftest import GROUPS, run_selftest


@pytest.mark.parametrize("seed", [1, 7])
def test_all_groups_pass(seed):
    results = run_selftest(seed)
    assert [r.name for r in results] == list(GROUPS)
    failed = [(r.name, r.detail) for r in results if not r.passed]
    assert not failed
