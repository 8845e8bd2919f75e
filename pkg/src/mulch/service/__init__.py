"""Decoupled suggestion service (store, async refits, HTTP API)."""

from mulch.service.core import (
    BudgetExhausted,
    Conflict,
    InvalidRequest,
    NotFound,
    ServiceConfig,
    ServiceError,
    SuggestionRecord,
    SuggestionService,
)

__all__ = ["BudgetExhausted", "Conflict", "InvalidRequest", "NotFound", "ServiceConfig", "ServiceError",
           "SuggestionRecord", "SuggestionService"]
