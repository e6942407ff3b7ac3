from ..model import KEEP, AdvisorDecision
from .backends import AdvisorError, AdvisorTransportError, ChatBackend, OpenAIChatBackend, ScriptedBackend, ScriptExhausted
from .base import Advisor, SelectionResult, merge_candidates, validate_selection
from .heuristic import HeuristicAdvisor, HeuristicThresholds, synthesize_model
from .ledger import BudgetExceeded, CallRecord, TokenLedger, estimate_tokens
from .llm import LLMAdvisor
from .parsing import ReplyParseError, extract_json
from .prompts import PromptRenderError, PromptTemplate, load_template, render

__all__ = [
    "KEEP",
    "Advisor",
    "AdvisorDecision",
    "AdvisorError",
    "AdvisorTransportError",
    "BudgetExceeded",
    "CallRecord",
    "ChatBackend",
    "HeuristicAdvisor",
    "HeuristicThresholds",
    "LLMAdvisor",
    "OpenAIChatBackend",
    "PromptRenderError",
    "PromptTemplate",
    "ReplyParseError",
    "ScriptExhausted",
    "ScriptedBackend",
    "SelectionResult",
    "TokenLedger",
    "estimate_tokens",
    "extract_json",
    "load_template",
    "merge_candidates",
    "render",
    "synthesize_model",
    "validate_selection",
]
