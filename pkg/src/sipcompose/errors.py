"""Exception hierarchy.

Every error carries the CLI exit code it maps to: 1 for domain failures
(infeasible requirements, false alarms), 2 for usage and input problems.
"""


class CompositionError(Exception):
    exit_code = 1


class InputError(CompositionError):
    exit_code = 2


class ParseError(InputError):
    pass


class ValidationError(InputError):
    pass


class UnknownBlock(InputError):
    pass


class UnknownInstruction(InputError):
    pass


class UnknownKind(InputError):
    pass


class DisabledPass(InputError):
    pass


class DanglingReference(InputError):
    pass


class InconsistentInput(InputError):
    pass


class StaleManifest(CompositionError):
    pass


class PresenceViolation(CompositionError):
    pass


class InfeasibleRequirements(CompositionError):
    pass


class IterationLimitExceeded(CompositionError):
    pass


class CycleRemains(CompositionError):
    pass


class FinalizationInconsistent(CompositionError):
    pass


class FalseAlarm(CompositionError):
    def __init__(self, manifest_ids, message=None):
        self.manifest_ids = sorted(manifest_ids)
        super().__init__(message or f"hash mismatch for manifests {self.manifest_ids}")
