"""cloudgrasp: self-supervised point-cloud shape prediction and table-top
grasping with a CEM policy, on an analytic desk-scale simulator."""

__version__ = "0.1.0"
