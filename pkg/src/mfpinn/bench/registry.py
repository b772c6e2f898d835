"""Shipped benchmark case files."""
from __future__ import annotations

from pathlib import Path

DATA_DIR = Path(__file__).resolve().parent.parent / "data"


def shipped_configs() -> dict:
    """Case name -> path of every case file shipped with the package."""
    return {p.stem: p for p in sorted(DATA_DIR.glob("*.json"))}


def shipped_path(name: str) -> Path:
    cfgs = shipped_configs()
    if name not in cfgs:
        raise KeyError(f"no shipped case {name!r}; available: {', '.join(cfgs)}")
    return cfgs[name]
