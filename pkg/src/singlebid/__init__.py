"""Screening single-bidder procurement auctions with positive-unlabelled learning."""

__version__ = "0.1.0"
