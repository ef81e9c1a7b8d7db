"""Shipped example images: manifests plus Guard assembly sources."""

from importlib import resources
from pathlib import Path

DEMOS = ("tutorial", "guest_linker", "netfilter", "hotswap")


def demo_dir(name: str) -> Path:
    return Path(str(resources.files(__name__).joinpath(name)))


def manifest_path(name: str) -> Path:
    return demo_dir(name) / "image.manifest"


def sources() -> list:
    """Every shipped ``.gasm`` file, sorted."""
    root = Path(str(resources.files(__name__)))
    return sorted(root.glob("*/*.gasm"))
