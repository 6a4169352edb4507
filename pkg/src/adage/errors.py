"""Exception types raised across the toolkit.

Every error carries its diagnostic payload as attributes so callers can
react programmatically; the message is for humans.
"""


class AdageError(Exception):
    """Base class for all toolkit errors."""


# --- container / file format ------------------------------------------------


class FormatError(AdageError):
    """A file does not conform to the ADGT/ADGM container contracts."""


class MagicMismatch(FormatError):
    def __init__(self, expected: bytes, got: bytes, path=None):
        self.expected = expected
        self.got = got
        self.path = path
        super().__init__(f"bad magic: expected {expected!r}, got {got!r}")


class UnsupportedVersion(FormatError):
    def __init__(self, got: int):
        self.got = got
        super().__init__(f"unsupported container version {got} (expected 1)")


class TruncatedPayload(FormatError):
    def __init__(self, declared: int, actual: int, path=None):
        self.declared = declared
        self.actual = actual
        self.path = path
        super().__init__(
            f"payload size mismatch: header declares {declared} bytes, file holds {actual}"
        )


class InvalidDimensions(FormatError):
    def __init__(self, dims):
        self.dims = tuple(dims)
        super().__init__(f"all dimensions must be >= 1, got {self.dims}")


class NonFiniteValue(FormatError):
    def __init__(self, flat_index: int):
        self.flat_index = flat_index
        super().__init__(f"non-finite value at flat index {flat_index}")


class RoleViolation(FormatError):
    def __init__(self, value: int, role: str):
        self.value = value
        self.role = role
        super().__init__(f"mask value {value} invalid for {role} role")


class MissingPaletteEntry(AdageError):
    def __init__(self, category: int):
        self.category = category
        super().__init__(f"no palette entry for category {category}")


class IoFailure(AdageError):
    def __init__(self, path, cause: BaseException):
        self.path = path
        self.cause = cause
        super().__init__(f"I/O failure on {path}: {cause}")


# --- channel-group partitions -------------------------------------------------


class PartitionInvalid(AdageError):
    """A channel-group set violates the partition conditions."""


class OverlappingGroups(PartitionInvalid):
    def __init__(self, channel: int, group_a: str, group_b: str):
        self.channel = channel
        self.group_a = group_a
        self.group_b = group_b
        super().__init__(
            f"channel {channel} appears in both {group_a!r} and {group_b!r}"
        )


class MissingChannels(PartitionInvalid):
    def __init__(self, channels):
        self.channels = sorted(channels)
        super().__init__(f"channels not covered by any group: {self.channels}")


class OutOfRangeChannel(PartitionInvalid):
    def __init__(self, index: int, total: int):
        self.index = index
        self.total = total
        super().__init__(f"channel index {index} outside [0, {total})")


class DuplicateGroupName(PartitionInvalid):
    def __init__(self, name: str):
        self.name = name
        super().__init__(f"duplicate group name {name!r}")


class SchemaError(AdageError):
    def __init__(self, path: str, reason: str):
        self.path = path
        self.reason = reason
        super().__init__(f"{path}: {reason}")


# --- prediction backends ------------------------------------------------------


class DimMismatch(AdageError):
    def __init__(self, expected, got, what="dims"):
        self.expected = expected
        self.got = got
        super().__init__(f"{what} mismatch: expected {expected}, got {got}")


class BackendFailure(AdageError):
    def __init__(self, detail: str):
        self.detail = detail
        super().__init__(f"backend failure: {detail}")


class SpawnFailure(BackendFailure):
    def __init__(self, argv, cause: BaseException):
        self.argv = list(argv)
        self.cause = cause
        AdageError.__init__(self, f"could not spawn {self.argv}: {cause}")


class ProtocolViolation(BackendFailure):
    def __init__(self, expected: str, got: str):
        self.expected = expected
        self.got = got
        AdageError.__init__(self, f"protocol violation: expected {expected}, got {got}")


class ChildExit(BackendFailure):
    def __init__(self, code):
        self.code = code
        AdageError.__init__(self, f"backend process exited with code {code}")


class BackendTimeout(BackendFailure):
    def __init__(self, seconds: float):
        self.seconds = seconds
        AdageError.__init__(self, f"backend did not answer within {seconds} s")


class EmptyBackgroundSet(AdageError):
    def __init__(self):
        super().__init__("background requires at least one tensor")


class MixedChannelCounts(AdageError):
    def __init__(self, counts):
        self.counts = sorted(set(counts))
        super().__init__(f"background tensors disagree on channel count: {self.counts}")


# --- shapley engine -------------------------------------------------------------


class TooManyGroups(AdageError):
    def __init__(self, k: int, limit: int = 20):
        self.k = k
        self.limit = limit
        super().__init__(f"{k} groups exceed the exact-enumeration limit of {limit}")


class InvalidSize(AdageError):
    def __init__(self, s_size: int, k: int):
        self.s_size = s_size
        self.k = k
        super().__init__(f"coalition size {s_size} outside [0, {k - 1}]")


# --- rule engine ------------------------------------------------------------------


class UnknownGroup(AdageError):
    def __init__(self, name: str):
        self.name = name
        super().__init__(f"rule references unknown channel group {name!r}")


class UnknownBand(AdageError):
    def __init__(self, band: str):
        self.band = band
        super().__init__(f"rule references unknown band {band!r}")


class UnknownMask(AdageError):
    def __init__(self, mask: str):
        self.mask = mask
        super().__init__(f"rule references unknown mask {mask!r}")


class UnknownClass(AdageError):
    def __init__(self, cls):
        self.cls = cls
        super().__init__(f"rule references unknown class {cls!r}")


class MissingContext(AdageError):
    def __init__(self, identifier: str):
        self.identifier = identifier
        super().__init__(f"evaluation context is missing {identifier!r}")


# --- metrics --------------------------------------------------------------------------


class RankOutOfRange(AdageError):
    def __init__(self, rank: int, k_groups: int):
        self.rank = rank
        self.k_groups = k_groups
        super().__init__(f"rank {rank} outside [1, {k_groups}]")


class EmptyReference(AdageError):
    def __init__(self):
        super().__init__("reference set must be nonempty")


class NoAssignedPixels(AdageError):
    def __init__(self, rule: str):
        self.rule = rule
        super().__init__(f"no pixels assigned to rule {rule!r}")


class EmptyEligibleSet(AdageError):
    def __init__(self):
        super().__init__("no eligible pixels (all sentinel)")


class BadBinEdges(AdageError):
    def __init__(self, edges):
        self.edges = list(edges)
        super().__init__("bin edges must be strictly increasing with >= 2 entries")


class ManifestError(AdageError):
    def __init__(self, path: str, reason: str):
        self.path = path
        self.reason = reason
        super().__init__(f"{path}: {reason}")
