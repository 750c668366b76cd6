"""
Parallel - Seeded job execution over a process pool
"""

import multiprocessing
import multiprocessing.pool
import traceback
from dataclasses import dataclass
from typing import Any, Callable, Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from ..backend import ConfigError, RunFailure


@dataclass(frozen=True)
class Job:
    """fn(payload, rng) executed with an rng derived from the job's position"""

    fn: Callable[[Any, np.random.Generator], Any]
    payload: Any


def job_rng(master_seed: int, stream: Sequence[int], index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(master_seed), *(int(s) for s in stream), int(index)]))


def _run_job(task: Tuple[int, Callable, Any, int, Tuple[int, ...]]) -> Dict[str, Any]:
    index, fn, payload, master_seed, stream = task
    try:
        result = fn(payload, job_rng(master_seed, stream, index))
        return {"success": True, "index": index, "result": result}
    except Exception as e:
        return {
            "success": False,
            "index": index,
            "error": f"{type(e).__name__}: {e}",
            "traceback": traceback.format_exc(),
        }


class ParallelRunner:
    """Pool of worker processes; results always come back in job order"""

    def __init__(self, workers: int = 1):
        if workers < 1:
            raise ConfigError(f"workers must be >= 1, got {workers}")
        self.workers = workers
        self._pool: Optional[multiprocessing.pool.Pool] = None

    def __enter__(self) -> "ParallelRunner":
        return self

    def __exit__(self, *exc):
        self.close()

    def close(self):
        if self._pool is not None:
            self._pool.close()
            self._pool.join()
            self._pool = None

    def _tasks(self, jobs: Sequence[Job], master_seed: int, stream: Sequence[int]):
        return [(i, job.fn, job.payload, master_seed, tuple(stream)) for i, job in enumerate(jobs)]

    def _get_pool(self):
        if self._pool is None:
            self._pool = multiprocessing.Pool(self.workers)
        return self._pool

    def run(self, jobs: Sequence[Job], master_seed: int, stream: Sequence[int] = ()) -> List[Any]:
        """
        Execute jobs and collect their results

        Args:
            jobs: Jobs to run
            master_seed: Root of every job's random stream
            stream: Extra keys separating calls within one run

        Returns:
            Results in job order

        Raises:
            RunFailure: when any job raised; successful results travel with it
        """
        if not jobs:
            return []
        tasks = self._tasks(jobs, master_seed, stream)
        if self.workers == 1 or len(tasks) == 1:
            outcomes = [_run_job(t) for t in tasks]
        else:
            outcomes = self._get_pool().map(_run_job, tasks)
        return _collect(outcomes)

    def run_unordered(self, jobs: Sequence[Job], master_seed: int, stream: Sequence[int] = ()) -> Iterator[Tuple[int, Any]]:
        """Yield (job index, result) as jobs finish"""
        if not jobs:
            return
        tasks = self._tasks(jobs, master_seed, stream)
        outcomes = (_run_job(t) for t in tasks) if self.workers == 1 else self._get_pool().imap_unordered(_run_job, tasks)
        done = []
        for outcome in outcomes:
            if not outcome["success"]:
                raise RunFailure(f"job {outcome['index']} failed: {outcome['error']}", done)
            done.append(outcome["result"])
            yield outcome["index"], outcome["result"]


def _collect(outcomes: List[Dict[str, Any]]) -> List[Any]:
    failed = [o for o in outcomes if not o["success"]]
    if failed:
        first = failed[0]
        partial = [o["result"] for o in outcomes if o["success"]]
        raise RunFailure(
            f"{len(failed)} of {len(outcomes)} jobs failed; job {first['index']}: {first['error']}",
            partial,
        )
    return [o["result"] for o in outcomes]


def run_parallel(jobs: Sequence[Job], workers: int, master_seed: int, stream: Sequence[int] = ()) -> List[Any]:
    """One-shot ParallelRunner.run"""
    with ParallelRunner(workers) as runner:
        return runner.run(jobs, master_seed, stream)
