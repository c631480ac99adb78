from .render import FigureRequest, render

__version__ = "0.1.0"

__all__ = ["FigureRequest", "render", "__version__"]
