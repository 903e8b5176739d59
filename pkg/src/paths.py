# src/paths.py
import os
from pathlib import Path

# Determine the repository root
REPO_ROOT = Path(__file__).resolve().parents[1]

# Image sequences (Oxford layout: graf/, leuven/, ...) live here
DATA_DIR = Path(os.environ.get("AFFINA_DATA_DIR", REPO_ROOT / "data"))

# Raster and match-drawing dumps written by --debug
DEBUG_DIR = Path(os.environ.get("AFFINA_DEBUG_DIR", Path.cwd() / "debug"))


def sequence_dir(name):
    """Directory of a named sequence under DATA_DIR"""
    return DATA_DIR / name


def ensure_debug_dir(path=None):
    """Create the debug directory on demand and return it"""
    target = Path(path) if path else DEBUG_DIR
    try:
        target.mkdir(parents=True, exist_ok=True)
    except PermissionError:
        # Fallback to temp directory
        import tempfile
        target = Path(tempfile.gettempdir()) / "affina-debug"
        target.mkdir(parents=True, exist_ok=True)
    return target


# Export paths for use in other modules
__all__ = ['REPO_ROOT', 'DATA_DIR', 'DEBUG_DIR', 'sequence_dir', 'ensure_debug_dir']
