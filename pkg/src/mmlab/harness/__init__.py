"""Configuration, sessions, experiment drivers and reports."""
