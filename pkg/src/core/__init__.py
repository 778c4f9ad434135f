"""
Core engine for SlumpVision: tensors, layers, models, configuration and logging
"""
