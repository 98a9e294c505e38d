"""Generative slate auctions on a synthetic ad market.

A learned allocation model places ads and organic content into page slots
from a single scoring pass under business constraints; a multi-tower scorer
ranks candidate slates and sets bid-bounded payments; classical second-price
baselines and incentive audits keep everything honest. See README for the
pipeline walkthrough.
"""

from ._version import __version__

__all__ = ["__version__"]
