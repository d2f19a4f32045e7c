"""Flat key-value configuration files: `key = value` lines, `#` comments."""

from __future__ import annotations

from pathlib import Path

__all__ = ["load_kv_config", "get_float", "get_int", "get_str", "get_bool",
           "parse_ladder", "parse_pair"]


def load_kv_config(path) -> dict[str, str]:
    values: dict[str, str] = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}: line {lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        values[key.strip()] = value.strip()
    return values


def get_float(cfg: dict, key: str, default: float) -> float:
    return float(cfg.get(key, default))


def get_int(cfg: dict, key: str, default: int) -> int:
    return int(cfg.get(key, default))


def get_str(cfg: dict, key: str, default: str | None = None) -> str | None:
    return cfg.get(key, default)


def get_bool(cfg: dict, key: str, default: bool) -> bool:
    raw = cfg.get(key)
    if raw is None:
        return default
    return raw.strip().lower() in ("1", "true", "yes", "on")


def parse_ladder(raw: str) -> tuple[float, ...]:
    return tuple(float(part) for part in raw.split(",") if part.strip())


def parse_pair(raw: str) -> tuple[float, float]:
    """Parse 'AxB' (or a single value used for both) into a float pair."""
    parts = raw.lower().split("x")
    if len(parts) == 1:
        return float(parts[0]), float(parts[0])
    if len(parts) != 2:
        raise ValueError(f"expected 'AxB', got {raw!r}")
    return float(parts[0]), float(parts[1])
