"""Figure rendering for bubblefill simulation outputs."""

__version__ = "0.1.0"

from .render import FigureSpec, SchemaError, render
