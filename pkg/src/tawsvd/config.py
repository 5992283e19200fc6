from __future__ import annotations

from dataclasses import asdict, dataclass, fields

UPDATE_THRESHOLD = 0.4
METHODS = ("svd", "asvd", "svdllm")
UPDATE_MODES = ("auto", "on", "off")


@dataclass(frozen=True)
class CompressionConfig:
    """Settings for one compression run.

    ``update="auto"`` turns the closed-form refit on only for ratios of 0.4
    and above. ``update`` is ignored for the ``svd`` and ``asvd`` baselines.
    """

    ratio: float = 0.2
    method: str = "svdllm"
    update: str = "auto"
    damping_rel: float = 1e-6
    ridge: float = 0.0
    seed: int = 0
    calib_count: int = 256

    def __post_init__(self):
        if not 0 < self.ratio < 1:
            raise ValueError(f"ratio must be in (0, 1), got {self.ratio}")
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.update not in UPDATE_MODES:
            raise ValueError(f"update must be one of {UPDATE_MODES}, got {self.update!r}")
        if self.damping_rel < 0 or self.ridge < 0:
            raise ValueError("damping_rel and ridge must be >= 0")
        if self.seed < 0 or self.calib_count < 1:
            raise ValueError("seed must be >= 0 and calib_count >= 1")

    @property
    def update_enabled(self) -> bool:
        if self.method != "svdllm":
            return False
        if self.update == "auto":
            return self.ratio >= UPDATE_THRESHOLD
        return self.update == "on"

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "CompressionConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)
