"""
Optimization, checkpointing and the experiment protocol for SlumpVision
"""
