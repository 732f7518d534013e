"""Streaming fraud scoring with windowed entity-profile risk features."""

from dynrisk.domain import (
    EntityDescriptor,
    FeedbackEvent,
    FeedbackPolicy,
    Transaction,
    extract_entity_value,
    resolve_label,
)

__version__ = "0.1.0"

__all__ = [
    "EntityDescriptor",
    "FeedbackEvent",
    "FeedbackPolicy",
    "Transaction",
    "extract_entity_value",
    "resolve_label",
]
