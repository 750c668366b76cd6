import numpy as np
import pytest

from metamarl.backend import ConfigError, RunFailure
from metamarl.utils.parallel import Job, ParallelRunner, job_rng, run_parallel


def draw(payload, rng):
    return payload + float(rng.random())


def fail_on_two(payload, rng):
    if payload == 2:
        raise ValueError("bad payload")
    return payload


def test_job_rng_depends_on_position_only():
    a = job_rng(5, (0, 1), 3).random(4)
    b = job_rng(5, (0, 1), 3).random(4)
    c = job_rng(5, (0, 1), 4).random(4)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)


def test_results_independent_of_worker_count():
    jobs = [Job(fn=draw, payload=float(i)) for i in range(6)]
    serial = run_parallel(jobs, workers=1, master_seed=9, stream=(0, 2))
    pooled = run_parallel(jobs, workers=2, master_seed=9, stream=(0, 2))
    assert serial == pooled
    assert [int(v) for v in serial] == list(range(6))


def test_failure_carries_partial_results():
    jobs = [Job(fn=fail_on_two, payload=i) for i in range(4)]
    with ParallelRunner(1) as runner:
        with pytest.raises(RunFailure) as info:
            runner.run(jobs, master_seed=0)
    assert info.value.partial_results == [0, 1, 3]
    assert "bad payload" in str(info.value)


def test_unordered_yields_every_index():
    jobs = [Job(fn=draw, payload=float(i)) for i in range(5)]
    with ParallelRunner(2) as runner:
        seen = dict(runner.run_unordered(jobs, master_seed=1))
        ordered = runner.run(jobs, master_seed=1)
    assert sorted(seen) == list(range(5))
    assert [seen[i] for i in range(5)] == ordered


def test_empty_and_invalid():
    assert ParallelRunner(1).run([], master_seed=0) == []
    with pytest.raises(ConfigError):
        ParallelRunner(0)
