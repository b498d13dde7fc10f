"""Versioned prompt templates shipped as package data."""

from __future__ import annotations

import json
from functools import lru_cache
from importlib import resources

PLACEHOLDERS = ("question", "evidence", "predicted_answer", "code", "missing_inds", "gold_answer")


@lru_cache(maxsize=None)
def manifest() -> dict:
    text = resources.files(__package__).joinpath("prompts/manifest.json").read_text(encoding="utf-8")
    return json.loads(text)


@lru_cache(maxsize=None)
def load_prompt(name: str) -> str:
    entry = manifest()["templates"][name]
    path = resources.files(__package__).joinpath("prompts", entry["file"])
    return path.read_text(encoding="utf-8").strip("\n")


def prompt_version(name: str) -> str:
    return manifest()["templates"][name]["version"]


def is_reconstruction(name: str) -> bool:
    return bool(manifest()["templates"][name].get("reconstruction", False))


def fill(template: str, **values: str) -> str:
    """Substitute ``{key}`` placeholders literally.

    ``str.format`` is not used because templates contain literal JSON braces.
    """
    out = template
    for key, value in values.items():
        out = out.replace("{" + key + "}", str(value))
    return out
