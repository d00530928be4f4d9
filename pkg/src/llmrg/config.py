"""Run configuration with CLI > file > default precedence."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace

from .llm import BackendConfig
from .validation import check_non_negative, check_positive_int, check_tau, check_unit_interval


@dataclass
class MockSettings:
    knowledge_path: str | None = None
    fidelity: float = 0.9
    seed: int = 0
    hallucination_rate: float = 0.0
    title_noise: float = 0.0


@dataclass
class LLMRGConfig:
    seed: int = 1
    tau: int = 30
    l_tru: int = 50
    chains_per_item: int = 3
    k: int = 3
    theta_sim: float = 0.35
    verify: bool = True
    divergent: bool = True
    kb_capacity: int = 100_000
    d_g: int = 64
    d_b: int = 64
    steps: int = 2
    n_buckets: int = 2 ** 14
    lr: float = 0.1
    epochs: int = 20
    batch_size: int = 32
    init_scale: float | None = None
    emb_scale: float = 1.0
    jobs: int = 1
    seeds: tuple[int, ...] = (1, 2, 3, 4, 5)
    backend: BackendConfig = field(default_factory=BackendConfig)
    mock: MockSettings = field(default_factory=MockSettings)

    def __post_init__(self):
        if isinstance(self.backend, dict):
            self.backend = BackendConfig(**self.backend)
        if isinstance(self.mock, dict):
            self.mock = MockSettings(**self.mock)
        self.seeds = tuple(self.seeds)
        check_tau(self.tau)
        check_unit_interval(self.theta_sim, "theta_sim")
        for name in ("l_tru", "chains_per_item", "k", "d_g", "d_b", "steps", "n_buckets",
                     "epochs", "batch_size", "jobs", "kb_capacity"):
            check_positive_int(getattr(self, name), name)
        check_non_negative(self.lr, "lr")
        check_unit_interval(self.mock.fidelity, "mock.fidelity")

    def to_dict(self) -> dict:
        out = asdict(self)
        out["seeds"] = list(self.seeds)
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "LLMRGConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def load(cls, path) -> "LLMRGConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def override(self, **changes) -> "LLMRGConfig":
        """Apply non-None overrides; dotted keys like ``backend.kind`` reach sub-configs."""
        top, backend, mock = {}, {}, {}
        for key, value in changes.items():
            if value is None:
                continue
            if key.startswith("backend."):
                backend[key.split(".", 1)[1]] = value
            elif key.startswith("mock."):
                mock[key.split(".", 1)[1]] = value
            else:
                top[key] = value
        cfg = replace(self, **top)
        if backend:
            cfg.backend = replace(cfg.backend, **backend)
        if mock:
            cfg.mock = replace(cfg.mock, **mock)
        return cfg
