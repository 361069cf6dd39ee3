"""Multi-agent inpatient pathway decision support: triage, diagnosis, treatment."""

__version__ = "0.1.0"
