"""Exception hierarchy shared across the package."""


class WafError(Exception):
    """Base class for every error raised by dualwaf."""


class MalformedRequest(WafError, ValueError):
    pass


class EmptyNode(WafError, ValueError):
    pass


class EmptyDataset(WafError, ValueError):
    pass


class EmptyCorpus(WafError, ValueError):
    pass


class SingleClassData(WafError, ValueError):
    pass


class NonConvergence(WafError, RuntimeError):
    pass


class ContractViolation(WafError, ValueError):
    pass


class UnsupportedVersion(WafError, ValueError):
    pass


class CorruptBundle(WafError, ValueError):
    def __init__(self, invariant: str, detail: str = ""):
        self.invariant = invariant
        msg = invariant if not detail else f"{invariant}: {detail}"
        super().__init__(msg)


class EmptyFile(WafError, ValueError):
    pass


class MissingColumn(WafError, KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else "missing column"


class UnmappedLabel(WafError, ValueError):
    pass


class SchemaViolation(WafError, ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class EmptyConfusion(WafError, ValueError):
    pass


class LengthMismatch(WafError, ValueError):
    pass


class TooFewRecords(WafError, ValueError):
    pass


class BindError(WafError, OSError):
    pass


class BundleLoadError(WafError, RuntimeError):
    pass
