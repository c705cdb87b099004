"""Stateless Internet-scale scan engine.

The library is split along the scan pipeline: target generation
(:mod:`groupcycle`, :mod:`sharder`, :mod:`targetspace`), probe construction
and validation (:mod:`probes`), rate control (:mod:`pacing`), response
deduplication (:mod:`dedup`), output (:mod:`streams`), a simulated network
medium (:mod:`simnet`) and the orchestrating :mod:`engine` with its CLI.
"""

__version__ = "1.0.0"

__all__ = ["__version__"]
