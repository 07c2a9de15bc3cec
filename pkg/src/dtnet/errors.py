"""Exception types. CLI exit codes hang off ``exit_code``."""


class DTNetError(Exception):
    exit_code = 1


class ConfigError(DTNetError, ValueError):
    exit_code = 2


class InputError(DTNetError, ValueError):
    exit_code = 2


class BoundsError(InputError):
    pass


class OrderingError(InputError):
    pass


class ParseError(InputError):
    def __init__(self, message, offset=None):
        super().__init__(message)
        self.offset = offset


class EncodingError(InputError):
    pass


class CompatibilityError(DTNetError):
    exit_code = 3


class CorruptBlobError(DTNetError):
    exit_code = 4

    def __init__(self, message, offset=None):
        super().__init__(message if offset is None else f"{message} (offset {offset})")
        self.offset = offset


class TrainingError(DTNetError, ArithmeticError):
    pass
