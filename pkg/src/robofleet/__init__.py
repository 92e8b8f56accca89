"""Online robot-evaluation platform with a simulated robot fleet.

Policies run on the client side and talk to the platform over HTTP:
they capture timestamped observations, push action chunks onto an
irrevocable FIFO queue, and poll scheduling state while staged grading
and analytics happen on the server.
"""

__version__ = "0.1.0"
