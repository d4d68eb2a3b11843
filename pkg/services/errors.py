"""Excepciones del dominio de enrutamiento."""


class ConfigError(ValueError):
    """Configuración inválida (dimensiones, claves desconocidas, rangos)."""


class InstanceParseError(ValueError):
    """Archivo de instancia mal formado; el mensaje incluye la ubicación."""


class ContractViolation(RuntimeError):
    """Se llamó a una operación fuera de su precondición."""


class DecodeError(ValueError):
    """Trayectoria incompleta o infactible que no se puede decodificar."""


class FeasibilityError(ValueError):
    """Solución que viola restricciones del problema."""

    def __init__(self, violations: list[str]):
        self.violations = list(violations)
        super().__init__("infeasible solution: " + "; ".join(self.violations))


class NumericFault(ArithmeticError):
    """Valores no finitos en el modelo o en la pérdida."""


class SizeGuardError(ValueError):
    """Instancia demasiado grande para el solver exacto."""


class CheckpointError(RuntimeError):
    """Checkpoint inexistente, corrupto o de versión incompatible."""


class TrainingDivergence(RuntimeError):
    """El entrenamiento produjo NaN; se guardó un checkpoint de aborto."""
