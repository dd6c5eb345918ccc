"""Exception hierarchy. Every error carries the CLI exit code it maps to."""


class DosedError(Exception):
    exit_code = 1


class ConfigError(DosedError):
    exit_code = 3


class FormatError(DosedError):
    exit_code = 4


class IntegrityError(DosedError):
    exit_code = 5


class ArgumentError(DosedError, ValueError):
    exit_code = 6


class DomainError(ArgumentError):
    """Input value outside the domain an operation is defined on."""


class BoundsError(ArgumentError):
    """Event lies outside the time span it must fit into."""


class ShapeError(ArgumentError):
    pass


class SamplingError(DosedError):
    exit_code = 7


class TrainingError(DosedError):
    exit_code = 8


EXIT_CODES = {
    0: "success",
    1: "unexpected internal error",
    2: "command-line usage error",
    ConfigError.exit_code: "configuration error (missing/invalid config, manifest or split)",
    FormatError.exit_code: "file format error (unparseable header or annotation)",
    IntegrityError.exit_code: "data integrity error (invariant violated on disk or across inputs)",
    ArgumentError.exit_code: "invalid argument (domain, bounds or shape error)",
    SamplingError.exit_code: "window sampling error",
    TrainingError.exit_code: "training diverged",
}
