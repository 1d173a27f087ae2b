"""Readers and writers for fixation tables and binary maps."""
