"""Strict-priority trajectory optimization for planar arms."""

from .backend import NAME as BACKEND

__all__ = ["BACKEND"]
__version__ = "0.1.0"
