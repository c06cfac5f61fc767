"""Batch exporter: images and texts to the promptfas embedding container."""

from .export import export_images, export_texts, load_manifest
from .models import load_backbone
from .writer import ExportError, write_store

__version__ = "0.1.0"
