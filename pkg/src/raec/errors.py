"""Exception hierarchy shared across the engine.

Validation problems (bad taxonomy files, malformed annotations, contract
violations) raise ``ValidationError`` subclasses; operational problems
(unreachable backends, timeouts, unreadable streams) raise ``BackendError``
subclasses. The CLI maps the former to exit code 1 and the latter to exit
code 2; the HTTP service maps them to 4xx/5xx statuses.
"""

from __future__ import annotations


class RaecError(Exception):
    """Base class for every error raised by this package."""


class ValidationError(RaecError):
    """Input violated a documented contract (schema, invariant, precondition)."""


class TaxonomyError(ValidationError):
    """Taxonomy document failed validation; message names the offending id."""


class UnknownCodeError(ValidationError):
    """A label referenced a code id absent from the active taxonomy."""


class ParseError(ValidationError):
    """Structured backend output could not be parsed after the allowed retry."""


class ConfigError(ValidationError):
    """Service or pipeline configuration is unusable."""


class BackendError(RaecError):
    """An external dependency (LLM backend, embedder endpoint) failed."""


class BackendTimeout(BackendError):
    """The external dependency did not answer within the configured timeout."""


class EmbeddingError(BackendError):
    """Embedding backend failed or returned a malformed vector."""


class RetrievalError(RaecError):
    """Index lookup could not be served (empty index, dimension mismatch)."""
