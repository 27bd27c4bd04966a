"""Multi-AUV data collection for the Internet of Underwater Things with
offline conservative multi-agent reinforcement learning."""

__version__ = "0.1.0"
