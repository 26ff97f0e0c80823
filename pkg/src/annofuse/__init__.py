"""Multi-source data fusion and cleansing with a replayable annotation trail.

Every automatic decision (source merge, discrepancy resolution) and every
human action (edit, finding, comment, validation vote) is captured as a
typed, immutable annotation in an append-only event log.
"""

__version__ = "0.1.0"
