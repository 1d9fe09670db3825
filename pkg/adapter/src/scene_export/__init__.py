"""Export raw driving captures into the mobidisc scene directory layout.

The adapter reads a simple "raw capture" dump (per-frame JSON metadata,
headerless float32 LiDAR records, camera images as PNG/JPEG), encodes each
camera image into a patch feature map, and writes scenes that the core
pipeline loads directly: ``frames.json``, UNPC lidar files, UNFT feature
files, and ``gt.json``. It also turns per-class example images into
L2-normalized prototype vectors (``prototypes.json``).
"""

__version__ = "0.1.0"
