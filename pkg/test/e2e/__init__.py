"""
End-to-end tests for RCA Tool
"""
