"""HTTP adapter exposing a video backend behind the generator wire protocol."""
from .config import AdapterConfig, ConfigError
from .conformance import (
    ConformanceReport,
    FixtureResult,
    GoldenFixture,
    conformance_check,
    load_fixtures,
)
from .model import SyntheticVideoModel
from .service import InferenceGate, QueueFull, create_app
from .validation import (
    DESIGN_SCHEMA,
    RESPONSE_SCHEMA,
    Violation,
    validate_design,
    validate_response,
)

__version__ = "0.1.0"

__all__ = [
    "AdapterConfig",
    "ConfigError",
    "ConformanceReport",
    "DESIGN_SCHEMA",
    "FixtureResult",
    "GoldenFixture",
    "InferenceGate",
    "QueueFull",
    "RESPONSE_SCHEMA",
    "SyntheticVideoModel",
    "Violation",
    "conformance_check",
    "create_app",
    "load_fixtures",
    "validate_design",
    "validate_response",
    "__version__",
]
