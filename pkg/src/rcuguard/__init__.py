"""Static and dynamic safety checking for read-copy-update client programs.

``lang`` parses the surface language, ``checker`` runs the flow-sensitive
type system, ``machine`` executes programs one atomic step at a time,
``oracle`` shadows each run with logical state and checks the memory
axioms, and ``explorer`` enumerates interleavings.
"""

from .checker import annotate_diff, check_program
from .explorer import ExploreBounds, explore, replay
from .lang import parse, pretty

__all__ = ["annotate_diff", "check_program", "ExploreBounds", "explore", "replay", "parse", "pretty"]
__version__ = "0.1.0"
