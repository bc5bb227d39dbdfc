"""
Recovers the (C, H, W) layout of intercepted flattened features
"""
