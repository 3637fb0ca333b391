"""Drive a face rig's jaw from a hand-held IMU streaming MSP telemetry."""

__version__ = "0.1.0"
