"""Locally private mean estimation for k-sparse vectors."""
