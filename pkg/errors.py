"""
Exception hierarchy shared by every pipeline module.

The CLI maps each family to an exit code; library code only raises.
"""


class CenterlineError(ValueError):
    """Base class for all pipeline errors"""

    exit_code = 3


class UsageError(CenterlineError):
    """Bad command-line usage or arguments"""

    exit_code = 2


class ConfigError(CenterlineError):
    """Invalid, unknown or incompatible configuration values"""

    exit_code = 2


class FormatError(CenterlineError):
    """Malformed on-disk artifact"""

    def __init__(self, message, path=None, offset=None, line=None):
        self.path = path
        self.offset = offset
        self.line = line
        where = []
        if path is not None:
            where.append(str(path))
        if offset is not None:
            where.append(f"byte offset {offset}")
        if line is not None:
            where.append(f"line {line}")
        super().__init__(f"{message} ({', '.join(where)})" if where else message)


class CapacityError(CenterlineError):
    """Centerline does not fit into the fixed-length matrix"""

    def __init__(self, size, max_len):
        self.size = size
        self.max_len = max_len
        super().__init__(f"centerline has {size} points but max_len L={max_len}")


class DataError(CenterlineError):
    """Dataset content violates an invariant (bounds, ids, splits)"""


class DivergenceError(CenterlineError):
    """Training produced a non-finite loss"""

    exit_code = 4

    def __init__(self, epoch, loss):
        self.epoch = epoch
        self.loss = loss
        super().__init__(f"training diverged at epoch {epoch} (loss={loss})")
