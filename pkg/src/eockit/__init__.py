"""Episode-of-care analytics: extraction, linkage, cohorts, KPIs, HTTP API."""

__version__ = "0.1.0"
