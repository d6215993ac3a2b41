"""posefields: skeleton schemas, lane keypoint conversion, composite field
encoding/decoding, and detection metrics for road scenes."""

__version__ = "0.1.0"
