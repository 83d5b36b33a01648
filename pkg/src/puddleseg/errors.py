"""Exception types shared across the package."""


class PuddlesegError(Exception):
    """Base class for package-specific errors."""


class NoForeground(PuddlesegError):
    """Raised when a mask has no pixel above the binarization threshold."""


class ZeroNormEmbedding(PuddlesegError):
    """Raised when an embedding cell has (numerically) zero L2 norm."""


class WidthMismatch(PuddlesegError):
    """Raised when a combiner weight vector disagrees with its embedding width."""


class ShapeMismatch(PuddlesegError):
    """Raised when tensor shapes disagree with the module contract."""


class MissingComponent(PuddlesegError):
    """Raised when a loss component required by the training stage is absent."""


class EmptyDataset(PuddlesegError):
    """Raised when a training run is started on an empty dataset."""


class NonFiniteLoss(PuddlesegError):
    """Raised when a loss value becomes NaN or infinite during training."""


class NonFiniteGradient(PuddlesegError):
    """Raised when a gradient tensor becomes NaN or infinite."""


class VersionMismatch(PuddlesegError):
    """Raised when a checkpoint file has an unsupported format version."""


class CorruptFile(PuddlesegError):
    """Raised when a checkpoint file fails its checksum or is truncated."""
