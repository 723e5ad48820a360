"""Bridge between image files and detailfuse feature banks.

Crops Complete-Cover patches from images, runs a pluggable dual encoder,
and writes the same binary bank format the retrieval side consumes.
"""

from .encoders import ColorStatEncoder, Encoder, get_encoder
from .extract import ExtractJob, extract_images, extract_texts, letterbox, load_image
from .render import render_scene, save_png

__all__ = [
    "ColorStatEncoder",
    "Encoder",
    "ExtractJob",
    "extract_images",
    "extract_texts",
    "get_encoder",
    "letterbox",
    "load_image",
    "render_scene",
    "save_png",
]

__version__ = "0.1.0"
