"""Exception hierarchy shared by every pipeline stage."""


class VulnAssessError(Exception):
    """Base class; ``stage`` is filled in by :func:`vulnassess.assessor.assess`."""

    stage = None


# -- pdg ---------------------------------------------------------------------

class MalformedFunction(VulnAssessError):
    pass


class UnsupportedConstruct(VulnAssessError):
    def __init__(self, construct, line):
        super().__init__(f"unsupported construct {construct!r} at line {line}")
        self.construct = construct
        self.line = line


class SchemaViolation(VulnAssessError):
    def __init__(self, path, message="invalid value"):
        super().__init__(f"{path}: {message}")
        self.path = path


class UnknownNode(VulnAssessError):
    def __init__(self, node):
        super().__init__(f"node {node!r} is not in the graph")
        self.node = node


# -- vir ---------------------------------------------------------------------

class EmptyCode(VulnAssessError):
    pass


class VirParseError(VulnAssessError):
    pass


class MissingSection(VirParseError):
    def __init__(self, name):
        super().__init__(f"missing section: {name}")
        self.name = name


class EmptySection(VirParseError):
    def __init__(self, name):
        super().__init__(f"empty section: {name}")
        self.name = name


class ProviderError(VulnAssessError):
    """Transport-level failure reported by a provider."""


class ProviderExhausted(VulnAssessError):
    def __init__(self, attempts, cause):
        super().__init__(f"provider failed after {attempts} attempt(s): {cause}")
        self.attempts = attempts
        self.cause = cause


class MissingApiKey(VulnAssessError):
    def __init__(self, env_var):
        super().__init__(f"environment variable {env_var} is not set")
        self.env_var = env_var


# -- assessor / trainer ------------------------------------------------------

class EmptyBank(VulnAssessError):
    pass


class CheckpointError(VulnAssessError):
    pass


class InvalidProbability(VulnAssessError):
    pass


class LengthMismatch(VulnAssessError):
    pass


class EmptyDataset(VulnAssessError):
    pass


class NonFiniteLoss(VulnAssessError):
    def __init__(self, epoch, batch, breakdown):
        super().__init__(
            f"non-finite loss at epoch {epoch}, batch {batch}: {breakdown}")
        self.epoch = epoch
        self.batch = batch
        self.breakdown = breakdown


# -- dataset / eval ----------------------------------------------------------

class OutOfRange(VulnAssessError):
    def __init__(self, value, line=None):
        where = f" (line {line})" if line is not None else ""
        super().__init__(f"CVSS score {value!r} outside [0, 10]{where}")
        self.value = value
        self.line = line


class ParseError(VulnAssessError):
    def __init__(self, line, message):
        super().__init__(f"line {line}: {message}")
        self.line = line


class InvariantViolation(VulnAssessError):
    def __init__(self, record_id, field, message=""):
        super().__init__(f"record {record_id!r}, field {field!r} {message}".rstrip())
        self.record_id = record_id
        self.field = field


class EmptySplit(VulnAssessError):
    def __init__(self, partition):
        super().__init__(f"partition {partition!r} is empty")
        self.partition = partition


class DegenerateLabels(VulnAssessError):
    pass
