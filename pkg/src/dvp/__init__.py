"""Server-side video precoding toolkit.

Downscales each GOP with a multi-scale CNN (or classical filters), picks the
best downscaling factor per GOP/bitrate/codec on the rate-distortion plane,
drives external encoders, and emits a streaming manifest.  Clients only ever
need plain linear (bilinear) upscaling.
"""

__version__ = "0.1.0"
