from .backends import (
    BackendConfig,
    BackendError,
    HttpBackend,
    KnowledgeEntry,
    KnowledgeTable,
    LLMBackend,
    MockBackend,
    MockOracleConfig,
    make_backend,
)
from .parsing import ParseError, ParsedChains, parse_answer, parse_candidates, parse_chains
from .prompts import MASK_TOKEN, Prompt, PromptError, build_prompt, render_masked

__all__ = [
    "BackendConfig", "BackendError", "HttpBackend", "KnowledgeEntry", "KnowledgeTable",
    "LLMBackend", "MockBackend", "MockOracleConfig", "make_backend",
    "ParseError", "ParsedChains", "parse_answer", "parse_candidates", "parse_chains",
    "MASK_TOKEN", "Prompt", "PromptError", "build_prompt", "render_masked",
]
