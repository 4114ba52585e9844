class UttVerifyError(ValueError):
    """Base class of every error raised by the uttverify packages."""


class UnsupportedAudioError(UttVerifyError):
    pass


class FrameError(UttVerifyError):
    pass


class FeatureDimensionError(UttVerifyError):
    pass


class UnknownPhoneError(UttVerifyError):
    def __init__(self, phone: str, where: str = ""):
        self.phone = phone
        suffix = f" ({where})" if where else ""
        super().__init__(f"Unknown phone '{phone}'{suffix}")


class LexiconFormatError(UttVerifyError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class G2PError(UttVerifyError):
    pass


class ScriptError(UttVerifyError):
    pass


class InsufficientDataError(UttVerifyError):
    def __init__(self, phone: str, frames: int, needed: int):
        self.phone = phone
        super().__init__(
            f"Insufficient training data for phone '{phone}': "
            f"{frames} frames, at least {needed} needed"
        )


class TrainingDivergedError(UttVerifyError):
    def __init__(self, phone: str, iteration: int):
        self.phone = phone
        self.iteration = iteration
        super().__init__(
            f"Non-finite parameter while training '{phone}' at iteration {iteration}"
        )


class ModelFormatError(UttVerifyError):
    pass


class ModelVersionError(ModelFormatError):
    pass


class CorruptModelError(ModelFormatError):
    pass


class InventoryMismatchError(ModelFormatError):
    pass


class FingerprintMismatchError(UttVerifyError):
    pass


class ThresholdError(UttVerifyError):
    pass


class UtteranceTooShortError(UttVerifyError):
    pass


class AlignmentError(UttVerifyError):
    pass


class EmptySegmentError(UttVerifyError):
    pass


class CorpusError(UttVerifyError):
    pass


class ManifestError(UttVerifyError):
    pass

