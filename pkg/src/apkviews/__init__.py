"""Multi-view Android malware detection from static APK features."""

from .config import RunConfig, load_config
from .ingest import Label

__version__ = "0.1.0"

__all__ = ["Label", "RunConfig", "load_config", "__version__"]
