"""Parley: a deterministic group-conversation practice engine.

Orchestrates a two-phase language-practice session (one-on-one warm-up
assessment, then a supervised three-party conversation) with scene-grounded
topics, periodic generated-object anchors, and record/replay model access.
"""

__version__ = "0.1.0"
