from __future__ import annotations


class CurriculaError(Exception):
    """base exception for this package"""

    exit_code: int = 1


class ConfigError(CurriculaError):
    """invalid configuration, profile, windowing or schedule parameters"""

    exit_code = 2


class ParseError(CurriculaError):
    """malformed line in a manifest, registry, sidecar or pool file"""

    exit_code = 2

    def __init__(self, msg: str, path: object = None, lineno: int | None = None) -> None:
        self.path = path
        self.lineno = lineno
        if lineno is not None:
            msg = f"{path}:{lineno}: {msg}"
        super().__init__(msg)


class ValidationError(CurriculaError):
    """the file parsed, but its content breaks a manifest invariant"""

    exit_code = 2


class FeatureError(CurriculaError):
    """a retained sample could not be given a feature vector"""

    exit_code = 2

    def __init__(self, msg: str, clip_id: str, start_frame: int | None = None) -> None:
        self.clip_id = clip_id
        self.start_frame = start_frame
        where = f"clip {clip_id!r}"
        if start_frame is not None:
            where += f" start_frame={start_frame}"
        super().__init__(f"{where}: {msg}")


class DimensionError(CurriculaError, ValueError):
    """feature or parameter shapes do not line up"""

    exit_code = 2


class SpecError(CurriculaError):
    """benchmark spec cannot be realised"""

    exit_code = 2


class FormatError(CurriculaError):
    """checkpoint magic or version mismatch"""

    exit_code = 2


class IntegrityError(CurriculaError):
    """checkpoint payload length or checksum mismatch"""

    exit_code = 2


class LabelError(CurriculaError, KeyError):
    """unknown strategy label in an efficiency report"""

    exit_code = 2

    def __str__(self) -> str:
        # KeyError would repr() the message
        return str(self.args[0]) if self.args else ""


class TrainerError(CurriculaError):
    """training aborted; last_checkpoint is the last durable checkpoint, if any"""

    exit_code = 3

    def __init__(self, msg: str, last_checkpoint: object = None) -> None:
        self.last_checkpoint = last_checkpoint
        if last_checkpoint is not None:
            msg = f"{msg} (last durable checkpoint: {last_checkpoint})"
        super().__init__(msg)


class NonFiniteError(TrainerError):
    """an optimizer update produced nan or inf"""


class ComparisonError(CurriculaError):
    """a run directory handed to compare is unusable"""

    exit_code = 4
