"""Factor models for dependent loss counts in grouped portfolios."""

__version__ = "0.1.0"

from .errors import (ConfigError, DomainError, MaxFactorError, PanelParseError,  # noqa: E402
                     UsageError)
from .factor_model import Family, ModelSpec, ParamVector  # noqa: E402
from .panel import Panel, parse_panel, read_panel, serialize_panel  # noqa: E402

__all__ = ["ConfigError", "DomainError", "Family", "MaxFactorError", "ModelSpec", "Panel",
           "PanelParseError", "ParamVector", "UsageError", "__version__", "parse_panel",
           "read_panel", "serialize_panel"]
