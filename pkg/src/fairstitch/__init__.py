from .base import MethodManager
from typing import List, Optional
import logging

__all__ = [
    'MethodManager',
    'create_method_manager'
]

logger = logging.getLogger(__name__)


def create_method_manager(enabled_methods: Optional[List[str]] = None) -> MethodManager:
    """
    Create a method manager with the specified or all available training procedures.
    Args:
        enabled_methods: List of method names to enable (None for all)
    Returns:
        Configured MethodManager
    """
    manager = MethodManager()

    # Map of method names to their procedures (imported only as needed)
    method_imports = {
        'erm': lambda: __import__(__name__ + '.pipeline', fromlist=['train_erm']).train_erm,
        'tfs': lambda: __import__(__name__ + '.pipeline', fromlist=['train_tfs']).train_tfs,
        'fdr': lambda: __import__(__name__ + '.pipeline', fromlist=['train_fdr']).train_fdr,
    }

    if enabled_methods is None:
        enabled_methods = list(method_imports.keys())

    for name in enabled_methods:
        if name in method_imports:
            manager.register_method(name, method_imports[name]())
        else:
            logger.warning("Unknown method '%s' specified", name)

    return manager
