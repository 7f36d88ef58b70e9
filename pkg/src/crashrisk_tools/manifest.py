"""Run manifests, atomic output files and CLI error reporting."""

from __future__ import annotations

import hashlib
import json
import os
import sys
import tempfile
import time
from datetime import datetime
from pathlib import Path
from typing import TYPE_CHECKING, Any, Self

import pydantic
import typer
from pydantic import BaseModel, Field

from . import __version__
from .exceptions import (
    CrashRiskError,
    NonConvergenceError,
    NumericalError,
    UndefinedStatisticError,
)

if TYPE_CHECKING:
    from types import TracebackType

    import pandas as pd

MANIFEST_NAME = "manifest.json"
CSV_FLOAT_FORMAT = "%.10g"

EXIT_OK = 0
EXIT_BAD_INPUT = 2
EXIT_NUMERICAL = 3
EXIT_NON_CONVERGENCE = 4

# Errors a command reports as a one-line failure instead of a traceback.
CLI_ERRORS = (CrashRiskError, pydantic.ValidationError, OSError, ValueError)


# -- Atomic writers --


def atomic_write_bytes(path: Path, data: bytes) -> None:
    """Write *data* to a temp file next to *path*, then rename over it."""
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        Path(tmp_name).replace(path)
    except BaseException:
        Path(tmp_name).unlink(missing_ok=True)
        raise


def csv_bytes(df: pd.DataFrame) -> bytes:
    text = df.to_csv(index=False, lineterminator="\n", float_format=CSV_FLOAT_FORMAT)
    return text.encode("utf-8")


def json_bytes(payload: BaseModel | dict[str, Any] | list[Any]) -> bytes:
    data = payload.model_dump(mode="json") if isinstance(payload, BaseModel) else payload
    return (json.dumps(data, sort_keys=True, indent=2) + "\n").encode("utf-8")


def sha256_file(path: Path) -> str:
    digest = hashlib.sha256()
    with path.open("rb") as fh:
        for block in iter(lambda: fh.read(2**16), b""):
            digest.update(block)
    return digest.hexdigest()


# -- Manifest --


class RunManifest(BaseModel):
    """Provenance of one command invocation."""

    command: str
    argv: list[str] = Field(default_factory=list)
    config_paths: list[str] = Field(default_factory=list)
    seeds: dict[str, int] = Field(default_factory=dict)
    inputs: dict[str, str] = Field(default_factory=dict)
    outputs: dict[str, str] = Field(default_factory=dict)
    tool_version: str = __version__
    started_at: str = ""
    duration_seconds: float = 0.0


class DirectoryManifest(BaseModel):
    """The single manifest of an output directory: latest run per command."""

    runs: dict[str, RunManifest] = Field(default_factory=dict)


class RunRecorder:
    """Collects inputs and outputs of a command and writes the manifest.

    Used as a context manager; if the body raises, every output written so
    far is removed and no manifest is updated.
    """

    def __init__(
        self,
        command: str,
        *,
        seeds: dict[str, int] | None = None,
        config_paths: list[Path] | None = None,
    ) -> None:
        self.manifest = RunManifest(
            command=command,
            argv=sys.argv[1:],
            seeds=seeds or {},
            config_paths=[str(p) for p in config_paths or []],
            started_at=datetime.now().isoformat(timespec="seconds"),
        )
        self._outputs: list[Path] = []
        self._t0 = time.perf_counter()

    def __enter__(self) -> Self:
        return self

    def __exit__(
        self,
        exc_type: type[BaseException] | None,
        exc: BaseException | None,
        tb: TracebackType | None,
    ) -> None:
        if exc_type is not None:
            self.rollback()
            return
        self.finalize()

    def add_input(self, path: Path) -> None:
        if path.is_dir():
            for child in sorted(path.iterdir()):
                if child.is_file() and child.name != MANIFEST_NAME:
                    self.manifest.inputs[str(child)] = sha256_file(child)
        elif path.exists():
            self.manifest.inputs[str(path)] = sha256_file(path)

    def write_bytes(self, path: Path, data: bytes) -> Path:
        atomic_write_bytes(path, data)
        self._outputs.append(path)
        self.manifest.outputs[str(path)] = hashlib.sha256(data).hexdigest()
        return path

    def write_csv(self, df: pd.DataFrame, path: Path) -> Path:
        return self.write_bytes(path, csv_bytes(df))

    def write_json(self, payload: BaseModel | dict[str, Any] | list[Any], path: Path) -> Path:
        return self.write_bytes(path, json_bytes(payload))

    def write_text(self, text: str, path: Path) -> Path:
        return self.write_bytes(path, text.encode("utf-8"))

    def rollback(self) -> None:
        for path in self._outputs:
            path.unlink(missing_ok=True)
        self._outputs.clear()

    def finalize(self) -> None:
        self.manifest.duration_seconds = round(time.perf_counter() - self._t0, 3)
        for directory in sorted({p.parent for p in self._outputs}):
            manifest_path = directory / MANIFEST_NAME
            existing = DirectoryManifest()
            if manifest_path.exists():
                try:
                    existing = DirectoryManifest.model_validate_json(manifest_path.read_text())
                except pydantic.ValidationError:
                    existing = DirectoryManifest()
            existing.runs[self.manifest.command] = self.manifest
            atomic_write_bytes(manifest_path, json_bytes(existing))


# -- Error reporting --


def exit_code_for(exc: BaseException) -> int:
    """Map an exception onto the documented CLI exit codes."""
    if isinstance(exc, NonConvergenceError):
        return EXIT_NON_CONVERGENCE
    if isinstance(exc, NumericalError | UndefinedStatisticError):
        return EXIT_NUMERICAL
    # InvalidInputError, MissingDataError, pydantic.ValidationError, OSError, ...
    return EXIT_BAD_INPUT


def fail(exc: BaseException) -> typer.Exit:
    """Print the one-line machine-parsable reason and build the exit signal."""
    code = exit_code_for(exc)
    message = " ".join(str(exc).split())
    typer.echo(f"error: {code} {type(exc).__name__}: {message}", err=True)
    return typer.Exit(code=code)
