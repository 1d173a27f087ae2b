"""Saliency maps as point processes, evaluated in bits per fixation."""

from infogain.utils import get_app_version

__version__ = get_app_version()
