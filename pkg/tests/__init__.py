"""Tests for redundancy-lens."""
