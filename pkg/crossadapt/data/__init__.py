"""Schemas, synthetic streams, preprocessing, temporal splits and CSV I/O."""
