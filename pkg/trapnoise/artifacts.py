from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import shutil
import uuid
from collections.abc import Sequence
from pathlib import Path
from typing import Any

import numpy as np

from trapnoise.constants import APP_NAME, APP_VERSION

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"
CSV_FORMAT = "%.12g"


def _json_ready(value: Any) -> Any:
    if isinstance(value, dict):
        return {str(k): _json_ready(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_json_ready(v) for v in value]
    if isinstance(value, np.ndarray):
        return _json_ready(value.tolist())
    if isinstance(value, np.generic):
        return _json_ready(value.item())
    if isinstance(value, Path):
        return str(value)
    if isinstance(value, float) and not math.isfinite(value):
        return None
    return value


def dumps(data: Any) -> str:
    return json.dumps(_json_ready(data), indent=2, sort_keys=True, allow_nan=False) + "\n"


def sha256_file(path: Path) -> str:
    digest = hashlib.sha256()
    with path.open("rb") as handle:
        for chunk in iter(lambda: handle.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


class ArtifactWriter:
    """Stages a run's files next to the output directory and swaps them in on success.

    Used as a context manager: a failure inside the block removes the staging
    directory and leaves any previous output untouched.
    """

    def __init__(
        self,
        out_dir: str | Path,
        command: str,
        config: dict[str, Any] | None = None,
        config_sections: Sequence[str] = (),
        unit_conversions: dict[str, float] | None = None,
        seed: int = 0,
    ) -> None:
        self.out_dir = Path(out_dir)
        self.command = command
        self.config = config or {}
        self.config_sections = sorted(config_sections)
        self.unit_conversions = unit_conversions or {}
        self.seed = seed
        self.staging: Path | None = None
        self._files: list[str] = []

    def __enter__(self) -> ArtifactWriter:
        self.out_dir.parent.mkdir(parents=True, exist_ok=True)
        self.staging = self.out_dir.parent / f".staging-{self.out_dir.name}-{uuid.uuid4().hex[:8]}"
        self.staging.mkdir()
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        if self.staging is None:
            return
        if exc_type is not None:
            shutil.rmtree(self.staging, ignore_errors=True)
            self.staging = None
            return
        try:
            self._write_manifest()
            self._swap_in()
        except BaseException:
            shutil.rmtree(self.staging, ignore_errors=True)
            raise
        finally:
            self.staging = None

    @property
    def files(self) -> list[str]:
        return sorted(self._files)

    def path(self, name: str) -> Path:
        """Staging path for `name`; the file is listed in the manifest once the run commits."""
        if self.staging is None:
            raise RuntimeError("ArtifactWriter used outside its context")
        target = self.staging / name
        target.parent.mkdir(parents=True, exist_ok=True)
        if name not in self._files:
            self._files.append(name)
        return target

    def write_text(self, name: str, text: str) -> Path:
        target = self.path(name)
        target.write_text(text, encoding="utf-8")
        return target

    def write_json(self, name: str, data: Any) -> Path:
        return self.write_text(name, dumps(data))

    def write_csv(self, name: str, header: Sequence[str], table) -> Path:
        target = self.path(name)
        array = np.asarray(table, dtype=np.float64)
        if array.ndim == 1:
            array = array.reshape(-1, len(header))
        np.savetxt(target, array, delimiter=",", header=",".join(header), comments="", fmt=CSV_FORMAT)
        return target

    def _write_manifest(self) -> None:
        assert self.staging is not None
        manifest = {
            "tool": APP_NAME,
            "version": APP_VERSION,
            "command": self.command,
            "seed": self.seed,
            "config": self.config,
            "config_sections": self.config_sections,
            "unit_conversions": self.unit_conversions,
            "files": {name: sha256_file(self.staging / name) for name in self.files},
        }
        (self.staging / MANIFEST_NAME).write_text(dumps(manifest), encoding="utf-8")

    def _swap_in(self) -> None:
        assert self.staging is not None
        previous: Path | None = None
        if self.out_dir.exists():
            previous = self.out_dir.parent / f".previous-{self.out_dir.name}-{uuid.uuid4().hex[:8]}"
            os.replace(self.out_dir, previous)
        try:
            os.replace(self.staging, self.out_dir)
        except OSError:
            if previous is not None:
                os.replace(previous, self.out_dir)
            raise
        if previous is not None:
            shutil.rmtree(previous, ignore_errors=True)
        logger.info("wrote %d artifacts to %s", len(self._files), self.out_dir)


def read_manifest(out_dir: str | Path) -> dict[str, Any]:
    return json.loads((Path(out_dir) / MANIFEST_NAME).read_text(encoding="utf-8"))
