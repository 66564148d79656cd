"""Tests package for Screenfolio."""
