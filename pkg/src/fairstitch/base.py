import logging
from concurrent.futures import ProcessPoolExecutor
from typing import Any, Callable, Dict, List, Mapping, Sequence

from .errors import ContractError
from .pipeline import TrainingResult

logger = logging.getLogger(__name__)


class MethodManager:
    """
    Manager class for the training procedures (erm, tfs, fdr).
    Dispatches runs by method name, keeps run and epoch counts per method,
    and fans independent seed-sweep runs out to worker processes.
    """

    def __init__(self):
        self.methods: Dict[str, Callable[..., TrainingResult]] = {}
        self.run_counts: Dict[str, int] = {}  # Just for stats
        self.epoch_counts: Dict[str, int] = {}

    def register_method(self, name: str, func: Callable[..., TrainingResult]):
        """Register a training procedure."""
        self.methods[name] = func
        self.run_counts[name] = 0
        self.epoch_counts[name] = 0

    def _lookup(self, name: str) -> Callable[..., TrainingResult]:
        if name not in self.methods:
            raise ContractError(f"unknown method '{name}', registered: {sorted(self.methods)}")
        return self.methods[name]

    def _count(self, name: str, result: TrainingResult):
        self.run_counts[name] += 1
        self.epoch_counts[name] += result.epochs

    def run(self, name: str, **kwargs: Any) -> TrainingResult:
        result = self._lookup(name)(**kwargs)
        self._count(name, result)
        return result

    def run_sweep(self, name: str, runs: Sequence[Mapping[str, Any]], jobs: int = 1) -> List[TrainingResult]:
        """Run `name` once per kwargs mapping; results come back in input order."""
        func = self._lookup(name)
        if jobs <= 1 or len(runs) <= 1:
            results = [func(**kwargs) for kwargs in runs]
        else:
            logger.info("Running %d %s runs on %d workers", len(runs), name, jobs)
            with ProcessPoolExecutor(max_workers=jobs) as executor:
                futures = [executor.submit(func, **kwargs) for kwargs in runs]
                results = [future.result() for future in futures]
        for result in results:
            self._count(name, result)
        return results

    def print_stats(self):
        """Print run statistics."""
        print("\nTraining Statistics:")
        print("------------------------")
        for name in self.methods:
            print(f"{name}: {self.run_counts[name]} runs, {self.epoch_counts[name]} epochs")
        print("------------------------")
