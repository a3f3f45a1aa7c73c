"""Command-line harness, file formats and the synthetic oracle pipeline."""
