"""Change-point detectors for jamming and spoofing in location-measurement streams."""
