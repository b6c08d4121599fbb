"""
SE(3) value types used across the pipeline.
"""
