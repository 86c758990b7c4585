"""Fine-grained access control middleware built on guarded policy expressions."""

from .cli import CLIManager
from .src.sieve.middleware import Sieve
from .version import __version__

__all__ = ["CLIManager", "Sieve", "__version__"]
