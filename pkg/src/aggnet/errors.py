"""Exception types shared across the package."""


class AggNetError(Exception):
    """Base class for all package errors."""


class SelfLoop(AggNetError):
    def __init__(self, node):
        self.node = node
        super().__init__(f"self-loop at node {node}")


class DuplicateLink(AggNetError):
    def __init__(self, link):
        self.link = link
        super().__init__(f"duplicate link {link}")


class NegativeCapacity(AggNetError):
    def __init__(self, link, value):
        self.link = link
        self.value = value
        super().__init__(f"negative capacity {value} on link {link}")


class UnreachableAggregator(AggNetError):
    """A node has no directed path to the aggregator."""

    def __init__(self, node):
        self.node = node
        super().__init__(f"node {node} cannot reach the aggregator")


class CycleError(AggNetError):
    def __init__(self, cycle):
        self.cycle = list(cycle)
        super().__init__(f"graph contains a cycle: {self.cycle}")


class BadParams(AggNetError):
    pass


class TooManyTrees(AggNetError):
    def __init__(self, limit):
        self.limit = limit
        super().__init__(
            f"more than {limit} aggregation trees; raise the limit or supply a tree subset"
        )


class LPNumericalFailure(AggNetError):
    def __init__(self, message, residuals=None):
        self.residuals = residuals or {}
        super().__init__(message)


class ValueOutOfAlphabet(AggNetError):
    def __init__(self, value, alphabet_size):
        self.value = value
        super().__init__(f"value {value} outside alphabet of size {alphabet_size}")


class OracleMismatch(AggNetError):
    """A completed round aggregated to a value different from the offline result."""

    def __init__(self, round_id, got, expected):
        self.round_id = round_id
        self.got = got
        self.expected = expected
        super().__init__(
            f"round {round_id}: aggregated value {got!r} != offline value {expected!r}"
        )


class MultiTreeConfig(AggNetError):
    pass


class SeriesTooShort(AggNetError):
    def __init__(self, length, required):
        self.length = length
        self.required = required
        super().__init__(f"series of length {length} is shorter than required {required}")
