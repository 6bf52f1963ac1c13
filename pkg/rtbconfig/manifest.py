# Copyright 2021, Milan Meulemans.
#
# This file is part of rtbconfig.
#
# rtbconfig is free software: you can redistribute it and/or modify
# it under the terms of the GNU Lesser General Public License as published by
# the Free Software Foundation, either version 3 of the License, or
# (at your option) any later version.
#
# rtbconfig is distributed in the hope that it will be useful,
# but WITHOUT ANY WARRANTY; without even the implied warranty of
# MERCHANTABILITY or FITNESS FOR A PARTICULAR PURPOSE.  See the
# GNU Lesser General Public License for more details.
#
# You should have received a copy of the GNU Lesser General Public License
# along with rtbconfig.  If not, see <https://www.gnu.org/licenses/>.

"""Run manifests: what was run, on which inputs, producing which outputs."""
from __future__ import annotations

import hashlib
import json
import logging
from collections.abc import Iterable
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any

from .exceptions import DataError
from .typing import ManifestData

__all__ = ["MANIFEST_SUFFIX", "RunManifest", "file_digest", "manifest_path", "utc_now"]

_LOGGER = logging.getLogger(__name__)

MANIFEST_SUFFIX = ".manifest.json"


def file_digest(path: str | Path) -> str:
    """Return the SHA-256 hex digest of a file."""
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for block in iter(lambda: handle.read(1 << 20), b""):
            digest.update(block)
    return digest.hexdigest()


def utc_now() -> str:
    """Return the current UTC time in ISO 8601."""
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def manifest_path(output: str | Path) -> Path:
    """Return where the manifest of ``output`` lives (inside it for directories)."""
    output = Path(output)
    if output.is_dir():
        return output / "manifest.json"
    return output.with_name(output.name + MANIFEST_SUFFIX)


def _digests(paths: Iterable[str | Path]) -> dict[str, str]:
    return {str(path): file_digest(path) for path in sorted(map(str, paths))}


@dataclass
class RunManifest:
    """Reproducibility record written next to every command's output."""

    argv: list[str]
    command: str
    config: dict[str, Any] = field(default_factory=dict)
    inputs: dict[str, str] = field(default_factory=dict)
    outputs: dict[str, str] = field(default_factory=dict)
    seed: int | None = None
    code_version: str = ""
    started_at: str = field(default_factory=utc_now)
    finished_at: str = ""

    def record_inputs(self, paths: Iterable[str | Path]) -> None:
        """Digest the input files."""
        self.inputs.update(_digests(paths))

    def record_outputs(self, paths: Iterable[str | Path]) -> None:
        """Digest the output files and stamp the finish time."""
        self.outputs.update(_digests(paths))
        self.finished_at = utc_now()

    def to_dict(self) -> ManifestData:
        """Return the JSON document."""
        return asdict(self)  # type: ignore[return-value]

    def write(self, path: str | Path) -> Path:
        """Write the manifest as pretty-printed JSON with sorted keys.

        The document is serialized before the file is opened, so a value
        that cannot be written leaves no partial manifest behind.
        """
        path = Path(path)
        text = json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"
        with open(path, "w", encoding="utf-8", newline="\n") as handle:
            handle.write(text)
        _LOGGER.debug("wrote manifest %s", path)
        return path

    @classmethod
    def load(cls, path: str | Path) -> RunManifest:
        """Read a manifest written by :meth:`write`."""
        try:
            with open(path, "r", encoding="utf-8") as handle:
                document = json.load(handle)
            return cls(**document)
        except (OSError, ValueError, TypeError) as err:
            raise DataError(f"cannot read manifest {path}: {err}") from err

    def changed_inputs(self) -> list[str]:
        """Return the inputs whose current digest differs from the recorded one."""
        return [path for path, digest in self.inputs.items() if not Path(path).is_file() or file_digest(path) != digest]

    def changed_outputs(self) -> list[str]:
        """Return the outputs whose current digest differs from the recorded one."""
        return [path for path, digest in self.outputs.items() if not Path(path).is_file() or file_digest(path) != digest]
