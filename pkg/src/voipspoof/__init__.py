"""Censorship circumvention over a spoofed-source VoIP downstream.

A relay outside the censored network pushes web content to a client as an
encrypted RTP stream whose source address belongs to an innocent "dummy"
host, while the client's small upstream travels over a separate
low-bandwidth channel.  The package contains the protocol stack plus a
deterministic network simulator with an adversarial censor.
"""

__version__ = "0.1.0"
