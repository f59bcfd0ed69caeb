# Copyright 2021 Agnostiq Inc.
#
# This file is part of Covalent.
#
# Licensed under the GNU Affero General Public License 3.0 (the "License").
# A copy of the License may be obtained with this software package or at
#
#      https://www.gnu.org/licenses/agpl-3.0.en.html
#
# Use of this file is prohibited except in compliance with the License. Any
# modifications or derivative works of this file must retain this copyright
# notice, and modified files must contain a notice indicating that they have
# been altered from the originals.
#
# Covalent is distributed in the hope that it will be useful, but WITHOUT
# ANY WARRANTY; without even the implied warranty of MERCHANTABILITY or
# FITNESS FOR A PARTICULAR PURPOSE. See the License for more details.
#
# Relief from the License may be granted by purchasing a commercial license.

"""Threadpool execution of independent per-view work."""

import asyncio
import time
from concurrent.futures import ThreadPoolExecutor
from functools import partial
from typing import Any, Callable, Iterable, List

from covalent._shared_files.logger import app_log

from .config import calib_config


class ViewExecutor:
    """Runs a blocking callable once per view on a threadpool and returns results in order.

    Args:
        max_workers: Threadpool size. Defaults to ``circle_calib.max_workers``.
    """

    def __init__(self, max_workers: int = None):
        self.max_workers = max_workers or calib_config("max_workers")

    async def _execute_partial_in_threadpool(self, pool, partial_func):
        loop = asyncio.get_running_loop()
        return await loop.run_in_executor(pool, partial_func)

    def _timed(self, func: Callable, view_id: Any) -> Any:
        start = time.perf_counter()
        result = func(view_id)
        app_log.debug(f"Work item {view_id} finished in {time.perf_counter() - start:.3f} s")
        return result

    async def map_views(self, func: Callable, view_ids: Iterable) -> List[Any]:
        """Await ``func(view_id)`` for every view; the first exception propagates."""
        view_ids = list(view_ids)
        with ThreadPoolExecutor(max_workers=self.max_workers) as pool:
            futures = [
                self._execute_partial_in_threadpool(pool, partial(self._timed, func, view_id))
                for view_id in view_ids
            ]
            return list(await asyncio.gather(*futures))

    def run(self, func: Callable, view_ids: Iterable) -> List[Any]:
        """Blocking wrapper around ``map_views`` for synchronous callers.

        Inside a running event loop the work is driven by a private loop on a helper thread.
        """
        try:
            asyncio.get_running_loop()
        except RuntimeError:
            return asyncio.run(self.map_views(func, view_ids))
        with ThreadPoolExecutor(max_workers=1) as helper:
            return helper.submit(asyncio.run, self.map_views(func, view_ids)).result()
