"""Joint uplink/downlink bitrate selection for multi-camera 360-degree video."""

__version__ = "0.1.0"
