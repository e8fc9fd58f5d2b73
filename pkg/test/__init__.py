"""
Test package for RCA Tool
"""
