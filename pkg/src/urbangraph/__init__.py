"""Urban tract-facility networks and graph models for gentrification prediction."""

__version__ = "0.1.0"
