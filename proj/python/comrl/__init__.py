"""Context-based offline meta-RL lab: python surface over the C++ core."""

from ._comrl import *  # noqa: F401,F403
from ._comrl import __doc__  # noqa: F401
