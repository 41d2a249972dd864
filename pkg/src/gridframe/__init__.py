"""State estimation with bad-data processing and data framing attacks."""
