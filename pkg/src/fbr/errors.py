"""Exception types raised across the package.

Degenerate-batch conditions (empty bank, no background, a single class) are
ordinary events during training; the trainer catches them and records skip
flags instead of aborting.
"""


class FBRError(Exception):
    pass


class ArgumentError(FBRError, ValueError):
    pass


class DegenerateInputError(FBRError, ValueError):
    pass


class ContractError(FBRError, ValueError):
    pass


class ClassAbsentError(FBRError):
    pass


class EmptyBackgroundError(FBRError):
    pass


class EmptyBankError(FBRError):
    pass


class InsufficientClassesError(FBRError):
    pass


class EmptyPoolError(FBRError):
    pass


class UndefinedBandError(FBRError):
    pass


class GenerationError(FBRError):
    pass


class CheckpointError(FBRError):
    pass
