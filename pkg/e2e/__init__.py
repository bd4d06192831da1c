"""
E2E test package for redundancy-lens.
"""
