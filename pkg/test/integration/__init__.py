"""
Integration tests for RCA Tool
"""
