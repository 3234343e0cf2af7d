import pytest

from deepboost.process_pool import ProcessPool
from utils.exceptions import ProcessError


def _square(x):
    return x * x


def _fail(message):
    raise ValueError(message)


def test_inline_pool_runs_immediately():
    with ProcessPool(max_processes=1) as pool:
        pid = pool.start_process(_square, (7,))
        assert pool.get_process_status(pid) == "completed"
        assert pool.get_process_result(pid) == 49
        assert pool.wait(pid) == 49


def test_inline_failure_is_recorded():
    with ProcessPool(max_processes=1) as pool:
        pid = pool.start_process(_fail, ("boom",))
        assert pool.get_process_status(pid) == "failed"
        assert pool.get_process_error(pid) == "boom"
        with pytest.raises(ProcessError, match="boom"):
            pool.wait(pid)


def test_unknown_job():
    with ProcessPool(max_processes=1) as pool:
        assert pool.get_process_status("nope") == "not_found"
        with pytest.raises(ProcessError):
            pool.wait("nope")


def test_pool_size_must_be_positive():
    with pytest.raises(ProcessError):
        ProcessPool(max_processes=0)


@pytest.mark.slow
def test_worker_processes_return_results_in_submission_order():
    with ProcessPool(max_processes=2) as pool:
        ids = [pool.start_process(_square, (i,)) for i in range(5)]
        assert [pool.wait(pid) for pid in ids] == [0, 1, 4, 9, 16]
        assert all(pool.get_process_status(pid) == "completed" for pid in ids)
        failing = pool.start_process(_fail, ("worker boom",))
        with pytest.raises(ProcessError, match="worker boom"):
            pool.wait(failing)
