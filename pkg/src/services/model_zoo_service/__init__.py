"""
Splittable CNN classifiers: specs, presets, training and checkpoints
"""
