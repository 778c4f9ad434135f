"""
Clip storage, synthetic generation and preprocessing for SlumpVision
"""
