from django.core.management.base import BaseCommand, CommandError

from core.exceptions import (DesyncError, DimensionError, FrameDecodeError, InfeasibleAttackError,
                             InvalidSpecError, NumericalError, ScenarioError, TransportError)
from harness.services import ScenarioService

# Código de salida 2: entrada inválida; 3: falla numérica o de ejecución
VALIDATION_ERRORS = (ScenarioError, DimensionError, InvalidSpecError, FrameDecodeError, InfeasibleAttackError)
RUNTIME_ERRORS = (NumericalError, DesyncError, TransportError)


class KernelGuardCommand(BaseCommand):
    """Base command that maps library errors onto exit codes."""

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self.service = ScenarioService()

    def execute(self, *args, **options):
        try:
            return super().execute(*args, **options)
        except VALIDATION_ERRORS as e:
            raise CommandError(str(e), returncode=2) from e
        except RUNTIME_ERRORS as e:
            raise CommandError(str(e), returncode=3) from e
