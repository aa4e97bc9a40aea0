"""Bundled example models."""

from __future__ import annotations

from importlib import resources

from .model import ModelConfig
from .modelio import load_model

NAMES = ("mm_inf", "mm_inf_catastrophes", "map2", "two_state", "non_generator")


def fixture_path(name: str):
    if name not in NAMES:
        raise KeyError(f"unknown fixture {name!r}; available: {', '.join(NAMES)}")
    return resources.files("mmapq") / "data" / f"{name}.yaml"


def load_fixture(name: str) -> ModelConfig:
    return load_model(fixture_path(name).read_text())
