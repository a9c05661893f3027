"""warden: security monitoring for batch-job infrastructures.

Runs jobs under isolation policies, collects syscall/resource/log telemetry,
classifies behavior with supervised models and reacts automatically, with a
central coordinator aggregating alerts across nodes.
"""

__version__ = "0.1.0"
