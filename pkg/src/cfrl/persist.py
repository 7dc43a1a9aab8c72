"""Manifest sidecars shared by the binary checkpoint writers."""

import json


def manifest_path(checkpoint_path) -> str:
    return f"{checkpoint_path}.manifest.json"


def write_manifest(checkpoint_path, manifest: dict) -> None:
    with open(manifest_path(checkpoint_path), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_manifest(checkpoint_path) -> dict:
    with open(manifest_path(checkpoint_path), "r", encoding="utf-8") as fh:
        return json.load(fh)
