"""Configuration, experiment drivers, reports and the command line."""
