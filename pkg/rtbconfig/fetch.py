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

"""Download of attribution logs over HTTP."""
from __future__ import annotations

import asyncio
import hashlib
import logging
import os
from pathlib import Path
from typing import NamedTuple

from aiohttp import ClientConnectionError, ClientResponse, ClientResponseError, ClientSession, ClientTimeout

from .exceptions import Unavailable

__all__ = ["DownloadResult", "LogFetcher", "fetch_log"]

_LOGGER = logging.getLogger(__name__)


class DownloadResult(NamedTuple):
    """Where a download went, its size and its SHA-256 digest."""

    path: Path
    bytes: int
    sha256: str


class LogFetcher:
    """Stream a remote log file to disk."""

    _REQUEST_TIMEOUT = ClientTimeout(total=None, sock_connect=30, sock_read=300)
    _CHUNK_SIZE = 1 << 20

    def __init__(self, session: ClientSession, url: str, retries: int = 3) -> None:
        """Initialize the fetcher."""
        self._session = session
        self._url = url
        self._retries = retries

    @property
    def url(self) -> str:
        """Return the url."""
        return self._url

    @property
    def retries(self) -> int:
        """Return the number of attempts."""
        return self._retries

    async def _request(self) -> ClientResponse:
        """Open the download, retrying connection failures."""
        err = None
        for attempt in range(self._retries):
            try:
                resp = await self._session.request("get", self._url, timeout=self._REQUEST_TIMEOUT)
                err = None
                break
            except Exception as e:
                _LOGGER.debug("GET %s failed (attempt %d/%d): %s", self._url, attempt + 1, self._retries, e)
                err = e

        if err is not None:
            try:
                raise err
            except ClientConnectionError as err:
                raise Unavailable(f"{self._url} is unreachable") from err
            except asyncio.TimeoutError as err:
                raise Unavailable(f"{self._url} timed out") from err

        try:
            resp.raise_for_status()
        except ClientResponseError as err:
            resp.release()
            raise Unavailable(f"{self._url} answered HTTP {err.status}") from err
        return resp

    async def download(self, dest: str | Path) -> DownloadResult:
        """Write the body to ``dest`` via a temporary file renamed on success."""
        dest = Path(dest)
        partial = dest.with_name(dest.name + ".part")
        digest = hashlib.sha256()
        size = 0
        resp = await self._request()
        try:
            with open(partial, "wb") as handle:
                async for chunk in resp.content.iter_chunked(self._CHUNK_SIZE):
                    handle.write(chunk)
                    digest.update(chunk)
                    size += len(chunk)
        except (ClientConnectionError, asyncio.TimeoutError) as err:
            partial.unlink(missing_ok=True)
            raise Unavailable(f"download of {self._url} was interrupted") from err
        finally:
            resp.release()
        os.replace(partial, dest)
        _LOGGER.info("downloaded %s (%d bytes) to %s", self._url, size, dest)
        return DownloadResult(dest, size, digest.hexdigest())


async def fetch_log(url: str, dest: str | Path, retries: int = 3) -> DownloadResult:
    """Download ``url`` to ``dest`` with a fresh client session."""
    async with ClientSession() as session:
        return await LogFetcher(session, url, retries).download(dest)
