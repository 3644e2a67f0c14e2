"""Error taxonomy shared across the package.

ValidationError: a caller handed us an ill-formed spec or out-of-contract
argument.  NumericError: inputs were fine but the computation produced
something unusable (non-finite samples, empty series, ...).  The CLI maps
these to distinct exit codes.
"""


class ValidationError(ValueError):
    pass


class NumericError(RuntimeError):
    pass
