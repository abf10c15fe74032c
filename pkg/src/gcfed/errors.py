"""Exception types shared across the simulator."""


class ConfigError(ValueError):
    """Invalid configuration: bad key, bad value, or inconsistent shapes."""


class DataError(ValueError):
    """Invalid dataset content (e.g. label out of range)."""


class IdxFormatError(ValueError):
    """Malformed IDX file: wrong magic, truncated payload, or dim mismatch."""


class NotCentralizableError(ValueError):
    """Raised when centralization is requested for a tensor it is not defined on."""


class RoundFailure(RuntimeError):
    """Non-finite loss or gradient during local training.

    Carries enough context to report which client diverged at which step; the
    round loop records the failure instead of clipping or repairing.
    """

    def __init__(self, client_id: int, round_index: int, step: int, detail: str = ""):
        self.client_id = client_id
        self.round_index = round_index
        self.step = step
        msg = f"client {client_id} diverged at round {round_index}, step {step}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)
