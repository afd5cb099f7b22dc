from dataclasses import dataclass


@dataclass(frozen=True)
class Report:
    """Outcome of a validation: truthy when ok, otherwise carries the first violation."""

    passed: bool
    message: str = ""

    def __bool__(self):
        return self.passed

    @classmethod
    def ok(cls):
        return cls(True, "ok")

    @classmethod
    def fail(cls, message):
        return cls(False, message)
