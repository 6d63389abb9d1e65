"""HTTP front end over the shared operations layer."""

from .app import create_app

__all__ = ["create_app"]
