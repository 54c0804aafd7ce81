"""Prior-fused baselines and adaptive rollout allocation."""

from ._priorfuse import *  # noqa: F401,F403
from ._priorfuse import ConfigError, __doc__  # noqa: F401
