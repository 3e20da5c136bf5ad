"""Dataset registry: class lists and prompt templates shipped as data."""

from __future__ import annotations

import json
from importlib import resources

from .errors import DatasetUnknown, TemplateMismatch

DATASETS = ("dtd", "cifar100", "oxford_pets", "oxford_flowers", "imagenet_subset")

# datasets with LLM description templates (the world-knowledge side uses
# only the bare class-name prompt)
TEMPLATED = ("dtd", "cifar100", "oxford_pets", "oxford_flowers")

BARE_PROMPT = "a photo of a {category}."


def _load(name: str) -> dict:
    path = resources.files("bundle_exporter").joinpath(f"data/{name}.json")
    return json.loads(path.read_text(encoding="utf-8"))


def class_names(dataset: str) -> list[str]:
    table = _load("class_names")
    if dataset not in table:
        raise DatasetUnknown(f"unknown dataset {dataset!r}; choose from {DATASETS}")
    return list(table[dataset])


def templates(dataset: str) -> list[str]:
    table = _load("templates")
    if dataset not in table:
        raise DatasetUnknown(
            f"no description templates for {dataset!r}; choose from {TEMPLATED}")
    tpl = list(table[dataset])
    if len(tpl) != 5:
        raise TemplateMismatch(
            f"{dataset} ships {len(tpl)} templates, expected exactly 5")
    return tpl


def cached_descriptions(dataset: str) -> dict[str, list[str]]:
    """Offline description cache: class name -> five description strings."""
    table = _load("descriptions")
    if dataset not in table:
        raise DatasetUnknown(f"no cached descriptions for {dataset!r}")
    return {k: list(v) for k, v in table[dataset].items()}
