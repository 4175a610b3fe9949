"""Vision-language prompting for panoptic scene-graph relation prediction."""
__version__ = "0.1.0"
