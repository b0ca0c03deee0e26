"""File formats, experiment orchestration and the command line."""
