"""Exception type shared by all otlab modules."""


class OtlabError(ValueError):
    """Raised when an operation's precondition fails.

    ``code`` is a short stable identifier (e.g. ``"mass-mismatch"``) that
    callers and the CLI can match on without parsing the message.
    """

    def __init__(self, code: str, message: str = ""):
        self.code = code
        super().__init__(f"{code}: {message}" if message else code)
