"""Exception hierarchy shared by every stage of the pipeline."""


class TabletSigError(Exception):
    """Base class; the CLI prints ``error: <ClassName>: <message>``."""


class NonMonotonicTime(TabletSigError, ValueError):
    pass


class TooFewSamples(TabletSigError, ValueError):
    pass


class PressureOutOfRange(TabletSigError, ValueError):
    pass


class SignatureFormatError(TabletSigError, ValueError):
    pass


class DegenerateSignature(TabletSigError, ValueError):
    pass


class SequenceTooShort(TabletSigError, ValueError):
    pass


class EmptyTrainingSet(TabletSigError, ValueError):
    pass


class DimensionMismatch(TabletSigError, ValueError):
    pass


class NumericalUnderflow(TabletSigError, ArithmeticError):
    pass


class ModelFormatError(TabletSigError, ValueError):
    pass


class EmptyGroup(TabletSigError, ValueError):
    pass


class EmptyScoreSet(TabletSigError, ValueError):
    pass


class IncompleteCorpus(TabletSigError):
    pass


class MissingModels(TabletSigError):
    pass


class InvalidConfig(TabletSigError, ValueError):
    pass


class SelfForgery(TabletSigError, ValueError):
    pass


class IoFailure(TabletSigError, OSError):
    pass
