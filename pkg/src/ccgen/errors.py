"""Exception hierarchy. Every error the package raises on purpose derives from
:class:`CCGenError` so callers can catch the family at once."""


class CCGenError(Exception):
    pass


# scene
class UnknownTask(CCGenError):
    pass


class TooFar(CCGenError):
    pass


class AlreadyHeld(CCGenError):
    pass


class NothingHeld(CCGenError):
    pass


class AssetFormatError(CCGenError):
    pass


# kinematics
class OutOfLimits(CCGenError):
    pass


class Unreachable(CCGenError):
    pass


class TooFast(CCGenError):
    pass


# primitives
class UnknownObject(CCGenError):
    pass


class UnknownAnnotation(CCGenError):
    pass


class IkFailure(CCGenError):
    def __init__(self, agent_id: int, waypoint: int, reason: str = ""):
        self.agent_id = agent_id
        self.waypoint = waypoint
        self.reason = reason
        super().__init__(f"agent {agent_id}: waypoint {waypoint} unreachable {reason}".rstrip())


# constraint model
class ParseError(CCGenError):
    def __init__(self, sentence: str, span: tuple[int, int], expected: list[str], detail: str = ""):
        self.sentence = sentence
        self.span = span
        self.expected = expected
        a, b = span
        msg = f"cannot parse {sentence!r} at [{a}:{b}] near {sentence[a:b]!r}; " \
              f"expected one of: {', '.join(expected)}"
        super().__init__(msg + (f" ({detail})" if detail else ""))


class CategoryMismatch(CCGenError):
    pass


# checker
class BindingError(CCGenError):
    def __init__(self, problems: list[str]):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


# brain
class PlannerExhausted(CCGenError):
    pass


class RemoteError(CCGenError):
    pass


class SchemaError(CCGenError):
    pass


# factory
class InternalInconsistency(CCGenError):
    pass


class DivergenceDetected(CCGenError):
    def __init__(self, tick: int, detail: str):
        self.tick = tick
        self.detail = detail
        super().__init__(f"divergence at tick {tick}: {detail}")


class EmptyInput(CCGenError):
    pass


# tasks
class UnboundObject(CCGenError):
    pass


class TaskFormatError(CCGenError):
    pass


# dataset / cli
class ConfigError(CCGenError):
    pass


class IndexOutOfRange(CCGenError):
    pass
