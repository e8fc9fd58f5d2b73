# Test package for MCP-based RCA Tool