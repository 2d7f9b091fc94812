"""Command-line campaigns, configuration, result files and figures."""
