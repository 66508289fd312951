"""Atomic shared-register emulation over message-passing quorum systems.

Three interchangeable protocols (full-replication MW-ABD, erasure-coded
storage, and its self-stabilizing extension with bounded state, client
reincarnation, and agreement-based global reset), runnable over a
deterministic fault-injecting simulator or real sockets, plus benchmark
tooling that reproduces the reference experiments at desk scale.
"""

__version__ = "0.1.0"

from .core import (INITIAL_TAG, NULL_UID, RESET_TAG, InvalidConfig, Ordering,
                   OverflowDetected, QuorumConfig, Record, StableRegError,
                   Tag, Uid, Variant, compare_tags, next_tag, quorum_size)

__all__ = [
    "INITIAL_TAG", "NULL_UID", "RESET_TAG", "InvalidConfig", "Ordering",
    "OverflowDetected", "QuorumConfig", "Record", "StableRegError", "Tag",
    "Uid", "Variant", "compare_tags", "next_tag", "quorum_size",
    "__version__",
]
