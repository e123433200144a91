"""Exception hierarchy shared across the package."""


class ConvragError(Exception):
    """Base class for all package errors."""


class DataError(ConvragError):
    """Malformed or inconsistent input data (corpus, benchmark, run log, script file)."""


class BackendError(ConvragError):
    """A language-model backend call failed.

    Carries a short digest of the offending prompt so failures can be traced
    back to the call site without logging whole prompts.
    """

    def __init__(self, message: str, prompt_digest: str | None = None):
        if prompt_digest:
            message = f"{message} (prompt digest {prompt_digest})"
        super().__init__(message)
        self.prompt_digest = prompt_digest


class ScriptMissError(BackendError):
    """No scripted rule matched the request; test scripts must be exhaustive."""


class PipelineError(ConvragError):
    """A turn could not be completed; session state is left unchanged."""
