"""Exception hierarchy shared across the package."""


class HotStartError(Exception):
    """Base class for every error raised by this package."""


# -- case parsing / validation ------------------------------------------------


class CaseFormatError(HotStartError):
    pass


class MissingSection(CaseFormatError):
    def __init__(self, name):
        self.name = name
        super().__init__(f"case text has no '{name}' assignment")


class MalformedRow(CaseFormatError):
    def __init__(self, section, line, detail=""):
        self.section = section
        self.line = line
        msg = f"malformed row in '{section}' at line {line}"
        super().__init__(f"{msg}: {detail}" if detail else msg)


class NonNumericToken(CaseFormatError):
    def __init__(self, line, token):
        self.line = line
        self.token = token
        super().__init__(f"non-numeric token {token!r} at line {line}")


class CaseValidationError(HotStartError):
    pass


class NoSlackBus(CaseValidationError):
    def __init__(self, count):
        self.count = count
        super().__init__(f"expected exactly one slack bus, found {count}")


class DuplicateBusId(CaseValidationError):
    def __init__(self, bus_id):
        self.bus_id = bus_id
        super().__init__(f"bus id {bus_id} appears more than once")


class DanglingBranch(CaseValidationError):
    def __init__(self, f, t):
        self.f = f
        self.t = t
        super().__init__(f"branch {f}-{t} references an unknown bus")


class ZeroReactanceBranch(CaseValidationError):
    def __init__(self, idx):
        self.idx = idx
        super().__init__(f"in-service branch {idx} has zero reactance")


class UnknownBusType(CaseValidationError):
    def __init__(self, bus_id, code):
        self.bus_id = bus_id
        self.code = code
        super().__init__(f"bus {bus_id} has unsupported type code {code}")


class MissingGenerator(CaseValidationError):
    def __init__(self, bus_id):
        self.bus_id = bus_id
        super().__init__(f"voltage-controlled bus {bus_id} has no in-service generator")


# -- numerics -------------------------------------------------------------------


class NumericalError(HotStartError):
    pass


class SingularDcMatrix(NumericalError):
    def __init__(self, detail="reduced B matrix is singular (network disconnected?)"):
        super().__init__(detail)


class NonConvergence(NumericalError):
    def __init__(self, iterations, max_mismatch):
        self.iterations = iterations
        self.max_mismatch = max_mismatch
        super().__init__(
            f"Newton-Raphson did not converge after {iterations} iterations "
            f"(max mismatch {max_mismatch:.3e} pu)"
        )


class SingularJacobian(NumericalError):
    def __init__(self, iteration):
        self.iteration = iteration
        super().__init__(f"singular Jacobian at iteration {iteration}")


class MissingInput(HotStartError):
    def __init__(self, mode):
        self.mode = mode
        super().__init__(f"initial-condition mode {mode} is missing its required input")


class UnconvergedTarget(NumericalError):
    def __init__(self, k):
        self.k = k
        super().__init__(f"sample {k} has no converged AC solution")


class LowConvergenceRate(NumericalError):
    def __init__(self, rate):
        self.rate = rate
        super().__init__(f"warm-start convergence rate {rate:.1%} is below 50%")


class ShapeMismatch(HotStartError, ValueError):
    pass


class NonFiniteLoss(NumericalError):
    def __init__(self, epoch, batch):
        self.epoch = epoch
        self.batch = batch
        super().__init__(f"non-finite loss at epoch {epoch}, batch {batch}")


class HotStartNonConvergence(NumericalError):
    def __init__(self, k):
        self.k = k
        super().__init__(f"hot-start ACPF failed for test sample {k}")
