"""Wheeze vs. random-event classification and the event-duration bias experiment."""

__version__ = "0.1.0"
