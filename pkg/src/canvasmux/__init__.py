"""canvasmux: spatial multiplexing of concurrent camera streams onto one canvas."""

__version__ = "0.1.0"
