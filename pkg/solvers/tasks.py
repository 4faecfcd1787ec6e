# solvers/tasks.py

"""
Independent solves fanned out over worker processes. Results always come back
in submission order, whatever order the workers finish in.
"""

import logging
import os
from concurrent.futures import ProcessPoolExecutor
from typing import Dict, List, Sequence

from genreg.exceptions import NumericalAbort

from .methods import SolveResult, SolveSpec, solve

logger = logging.getLogger(__name__)


def _worker_setup():
    import django
    from django.apps import apps

    if not apps.ready:
        os.environ.setdefault("DJANGO_SETTINGS_MODULE", "genreg.settings")
        django.setup()


def solve_task(index: int, spec: SolveSpec) -> Dict:
    """Run one solve and report its outcome instead of raising, so one failure does not lose the batch."""
    try:
        logger.debug(f"[Tasks] solve {index}: {spec.method} lam={spec.lam:g} mu={spec.mu:g}")
        return {"status": "success", "index": index, "result": solve(spec)}
    except NumericalAbort as exc:
        logger.error(f"[Tasks] solve {index} aborted: {exc}")
        return {"status": "failed", "index": index, "reason": "numerical", "error": str(exc)}
    except ValueError as exc:
        logger.error(f"[Tasks] solve {index} rejected: {exc}")
        return {"status": "failed", "index": index, "reason": "config", "error": str(exc)}


def run_solves(specs: Sequence[SolveSpec], jobs: int = 1) -> List[SolveResult]:
    """
    Solve every spec, in-process for jobs == 1 and on a process pool
    otherwise. The first failure in submission order is re-raised as the
    exception type that caused it.
    """
    if jobs < 1:
        raise ValueError(f"jobs must be at least 1, got {jobs}")

    if jobs == 1 or len(specs) <= 1:
        outcomes = [solve_task(i, spec) for i, spec in enumerate(specs)]
    else:
        with ProcessPoolExecutor(max_workers=jobs, initializer=_worker_setup) as pool:
            outcomes = list(pool.map(solve_task, range(len(specs)), specs))

    failed = [o for o in outcomes if o["status"] != "success"]
    if failed:
        first = failed[0]
        logger.error(f"[Tasks] {len(failed)} of {len(specs)} solves failed")
        if first["reason"] == "numerical":
            raise NumericalAbort(f"solve {first['index']}: {first['error']}")
        raise ValueError(f"solve {first['index']}: {first['error']}")

    return [o["result"] for o in outcomes]
