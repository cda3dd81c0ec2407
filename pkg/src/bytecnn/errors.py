"""Exception types shared across the package."""


class BytecnnError(Exception):
    """Base class for all package-specific errors."""


class ParseError(BytecnnError):
    """A hex-dump line could not be decoded. Message names the 1-based line."""


class EmptySampleError(BytecnnError):
    """A sample decoded to zero bytes."""


class SchemaError(BytecnnError):
    """The labels table violates the Id,Class schema."""


class ReconciliationError(BytecnnError):
    """Labels and sample files do not match up; offenders listed in message."""

    def __init__(self, missing_files, unlabeled_files):
        self.missing_files = sorted(missing_files)
        self.unlabeled_files = sorted(unlabeled_files)
        parts = []
        if self.missing_files:
            parts.append(f"labels without files: {self.missing_files[:20]}")
        if self.unlabeled_files:
            parts.append(f"files without labels: {self.unlabeled_files[:20]}")
        super().__init__("; ".join(parts))


class ShapeError(BytecnnError, ValueError):
    """Tensor shapes do not conform to the operation's contract."""


class ConfigError(BytecnnError, ValueError):
    """A model or run configuration is invalid."""


class FormatError(BytecnnError):
    """A binary file (weights or preprocess cache) is corrupt or mismatched."""


class DivergenceError(BytecnnError):
    """Training produced a non-finite loss."""


class FoldError(BytecnnError):
    """A cross-validation fold failed; carries the fold index."""

    def __init__(self, fold, cause):
        self.fold = fold
        super().__init__(f"fold {fold} failed: {cause}")
