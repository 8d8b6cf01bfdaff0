"""Headless acquisition daemon for OpenBCI Cyton EEG boards.

Talks the Cyton serial dialect (against real hardware or the bundled
deterministic simulator), repairs and indexes the sample stream, runs the
filtering/resampling/epoching pipeline, and serves clients over a
newline-delimited JSON protocol on TCP and WebSocket.
"""

__version__ = "0.1.0"
