"""
Jerarquía de excepciones del proyecto.

Cada excepción lleva su código de salida para la CLI:
- 1: fallo de dominio (tarea de una sola clase, pérdida no finita, ...)
- 2: fallo de uso o de E/S (archivo malformado, checkpoint ilegible, ...)
"""

from typing import Optional, Sequence

EXIT_OK = 0
EXIT_DOMAIN = 1
EXIT_USAGE = 2


class CraError(Exception):
    """Base de todos los errores del proyecto."""

    exit_code: int = EXIT_DOMAIN

    def __init__(self, message: str):
        super().__init__(message)
        self.message = message


# ============================================================================
# ERRORES DE DOMINIO (exit 1)
# ============================================================================

class CraDomainError(CraError):
    exit_code = EXIT_DOMAIN


class ShapeMismatch(CraDomainError):
    def __init__(self, op: str, got: Sequence, expected: Sequence | str):
        super().__init__(f"{op}: shape mismatch, got {tuple(got)}, expected {expected}")
        self.op = op
        self.got = tuple(got)
        self.expected = expected


class NotScalar(CraDomainError):
    def __init__(self, shape: Sequence[int]):
        super().__init__(f"backward requires a 1x1 loss, got {tuple(shape)}")


class MissingClass(CraDomainError):
    def __init__(self, label: int):
        super().__init__(f"class {label:+d} is absent from the support set")
        self.label = label


class SingleClassTask(CraDomainError):
    def __init__(self, task_id: str):
        super().__init__(f"task {task_id!r} contains a single class")
        self.task_id = task_id


class TaskTooSmall(CraDomainError):
    def __init__(self, task_id: str, detail: str):
        super().__init__(f"task {task_id!r} is too small: {detail}")
        self.task_id = task_id


class PoolTooSmall(CraDomainError):
    def __init__(self, size: int, requested: int):
        super().__init__(f"reference pool has {size} molecules, {requested} requested")
        self.size = size
        self.requested = requested


class EmptyReferencePool(CraDomainError):
    pass


class EmptyTrainingSet(CraDomainError):
    pass


class NonFiniteLoss(CraDomainError):
    def __init__(self, episode: int, task_id: str, value: float):
        super().__init__(f"non-finite loss {value!r} at episode {episode} (task {task_id!r})")
        self.episode = episode
        self.task_id = task_id
        self.value = value


class SingleClass(CraDomainError):
    pass


class NoPositives(CraDomainError):
    pass


class RaggedInput(CraDomainError):
    pass


class DegenerateInput(CraDomainError):
    pass


class InvalidConfig(CraDomainError):
    pass


class AlreadyNormalized(CraDomainError):
    pass


class EncoderInputMismatch(CraDomainError):
    pass


class FeaturizeFailureRate(CraDomainError):
    def __init__(self, failed: int, total: int):
        super().__init__(f"{failed} of {total} SMILES lines failed to parse (more than 1%)")
        self.failed = failed
        self.total = total


# ============================================================================
# ERRORES DE SMILES (exit 1, con posición)
# ============================================================================

class SmilesError(CraDomainError):
    def __init__(self, message: str, position: Optional[int] = None):
        if position is not None:
            message = f"{message} (position {position})"
        super().__init__(message)
        self.position = position


class UnknownCharacter(SmilesError):
    def __init__(self, char: str, position: int):
        super().__init__(f"unknown character {char!r}", position)
        self.char = char


class UnterminatedBracket(SmilesError):
    def __init__(self, position: int):
        super().__init__("unterminated bracket atom", position)


class UnknownElement(SmilesError):
    def __init__(self, symbol: str, position: int):
        super().__init__(f"unknown element {symbol!r}", position)
        self.symbol = symbol


class UnmatchedRingClosure(SmilesError):
    def __init__(self, digit: str, position: Optional[int] = None):
        super().__init__(f"ring closure {digit} is never closed or is invalid", position)
        self.digit = digit


class DanglingBond(SmilesError):
    def __init__(self, position: int):
        super().__init__("bond symbol without a following atom", position)


class EmptyInput(SmilesError):
    def __init__(self):
        super().__init__("empty SMILES input", 0)


# ============================================================================
# ERRORES DE USO / E/S (exit 2)
# ============================================================================

class CraUsageError(CraError):
    exit_code = EXIT_USAGE


class MalformedLine(CraUsageError):
    def __init__(self, path: str, line_no: int, detail: str):
        super().__init__(f"{path}:{line_no}: {detail}")
        self.path = path
        self.line_no = line_no


class DuplicateRecordId(CraUsageError):
    def __init__(self, record_id: str, line_no: int):
        super().__init__(f"duplicate record id {record_id!r} at line {line_no}")
        self.record_id = record_id
        self.line_no = line_no


class EmptyInputFile(CraUsageError):
    def __init__(self, path: str):
        super().__init__(f"{path}: no data lines")
        self.path = path


class CheckpointFormatError(CraUsageError):
    pass


class ContainerFormatError(CraUsageError):
    pass


class MissingPath(CraUsageError):
    def __init__(self, flag: str, reason: str):
        super().__init__(f"{flag} is required: {reason}")
        self.flag = flag
