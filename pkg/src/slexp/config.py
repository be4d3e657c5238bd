"""Process-wide numeric settings.

Defaults can be overridden per call; the CLI mutates ``settings`` once at
startup from its global flags.
"""

import os
from dataclasses import dataclass, field


def _env_node_budget() -> int:
    raw = os.environ.get("SLEXP_NODE_BUDGET")
    if raw is None:
        return 2**20
    try:
        value = int(raw)
    except ValueError:
        raise ValueError(f"SLEXP_NODE_BUDGET must be an integer, got {raw!r}") from None
    if value < 1:
        raise ValueError("SLEXP_NODE_BUDGET must be positive")
    return value


@dataclass
class Settings:
    node_budget: int = field(default_factory=_env_node_budget)
    oracle_budget: int = 10**6
    tolerance: float = 1e-9
    workers: int = 1


settings = Settings()
