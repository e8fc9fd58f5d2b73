# Utility modules for the SDID toolkit
