#!/usr/bin/env python3
"""Regenerate data/descriptions.json, the offline description cache.

Each entry is a deterministic declarative stand-in for the answer an LLM
would give to the corresponding template about that class; swap in real
LLM output with `bundle-export export --live-llm`. One stand-in pattern
per template keeps the five rows per class distinct.
"""

import json
import os

from bundle_exporter import datasets

STAND_INS = {
    "dtd": [
        "A close up view of a {category} texture filling the frame with its repeating surface structure.",
        "In a photograph the {category} texture shows an even, continuous pattern with consistent lighting across the surface.",
        "The {category} texture is defined by its characteristic visual pattern and the material qualities of its surface.",
        "Even a small image patch of {category} shows the distinctive repeating elements that identify the texture.",
        "A flat, well lit photo in which the {category} texture covers the whole image without distracting objects.",
    ],
    "cifar100": [
        "A natural photo of {category} in its usual surroundings.",
        "In a real world image, {category} appears at everyday scale in a typical setting.",
        "The outline, color, and proportions of {category} are the visual details that identify it in a picture.",
        "A typical scene that contains {category} together with its usual background.",
        "A single image of {category} can be recognized by its familiar shape and typical context.",
    ],
    "oxford_pets": [
        "A portrait photo of a {category} pet looking toward the camera.",
        "A {category} cat or dog usually appears in photos with its characteristic build and coat.",
        "Typical facial features and fur patterns distinguish a {category} from other breeds.",
        "A {category} can be identified in a pet photograph by its distinctive head shape and coat markings.",
        "A clear, front facing photo of a {category} showing the face and chest.",
    ],
    "oxford_flowers": [
        "A close up photo of a {category} flower showing its petals in detail.",
        "The blossom of a {category} has its typical color, petal shape, and overall structure.",
        "A garden photo of {category} flowers among green leaves in natural light.",
        "A {category} can be recognized in a photograph of plants by its characteristic bloom.",
        "A detailed image focused on a single {category} bloom against a soft background.",
    ],
}


def main():
    out = {}
    for dataset in datasets.TEMPLATED:
        assert len(datasets.templates(dataset)) == len(STAND_INS[dataset]) == 5
        out[dataset] = {
            cls: [pattern.format(category=cls) for pattern in STAND_INS[dataset]]
            for cls in datasets.class_names(dataset)
        }
    target = os.path.join(os.path.dirname(__file__), "..", "src",
                          "bundle_exporter", "data", "descriptions.json")
    with open(os.path.normpath(target), "w", encoding="utf-8") as fh:
        json.dump(out, fh, indent=2, sort_keys=True, ensure_ascii=False)
        fh.write("\n")
    total = sum(len(v) for v in out.values())
    print(f"wrote {total} classes x 5 descriptions to {os.path.normpath(target)}")


if __name__ == "__main__":
    main()
