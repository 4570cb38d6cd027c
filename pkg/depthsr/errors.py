from typing import Dict, List, Optional

Error = str


class DepthSRError(Exception):
    pass


class ShapeError(DepthSRError, ValueError):
    pass


class PairingError(DepthSRError, FileNotFoundError):
    pass


class ContractError(DepthSRError):
    pass


class ConfigError(DepthSRError):
    def __init__(self, errors: List[Error]):
        self.errors: List[Error] = list(errors)
        super().__init__("invalid configuration:\n  " + "\n  ".join(self.errors))


class DivergenceError(DepthSRError):
    def __init__(
        self,
        what: str,
        epoch: Optional[int] = None,
        batch: Optional[int] = None,
        components: Optional[Dict[str, float]] = None,
    ):
        self.what: str = what
        self.epoch: Optional[int] = epoch
        self.batch: Optional[int] = batch
        self.components: Dict[str, float] = dict(components or {})
        message = f"non-finite {what}"
        if epoch is not None:
            message += f" at epoch {epoch}, batch {batch}"
        if self.components:
            message += ": " + ", ".join(f"{k}={v:.6g}" for k, v in self.components.items())
        super().__init__(message)


class ArchiveError(DepthSRError):
    pass


class CheckpointError(ArchiveError):
    def __init__(self, message: str, offending: Optional[List[str]] = None):
        self.offending: List[str] = list(offending or [])
        if self.offending:
            message += ": " + ", ".join(self.offending)
        super().__init__(message)
