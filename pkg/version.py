"""Version information for the Heterogeneous Fleet Routing API."""

__version__ = "0.3.0"
__app_name__ = "Heterogeneous Fleet Routing API"
