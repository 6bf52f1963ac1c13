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

"""rtbconfig: campaign configuration search for real-time bidding."""
__version__ = "0.1.0"

from .exceptions import *  # noqa: F401, F403, E402
from .dataset import *  # noqa: F401, F403, E402
from .scoring import *  # noqa: F401, F403, E402
from .search import *  # noqa: F401, F403, E402
from .synthetic import *  # noqa: F401, F403, E402
from .cvr_model import *  # noqa: F401, F403, E402
from .metrics import *  # noqa: F401, F403, E402
from .strategies import *  # noqa: F401, F403, E402
from .manifest import *  # noqa: F401, F403, E402

# ``fetch`` needs ``aiohttp``; the offline parts of the package work without it.
try:  # pragma: no cover - optional dependency handling
    from .fetch import *  # noqa: F401, F403, E402
except ModuleNotFoundError:  # pragma: no cover - aiohttp not available
    pass
