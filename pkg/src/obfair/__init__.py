"""Fairness auditing for face obfuscation (blur and pixelation).

Calibrates the strongest obfuscation each face tolerates while still being
detected, mounts a re-identification attack on the obfuscated faces, and
reports per-group and intersectional recognition metrics.
"""

__version__ = "0.1.0"
