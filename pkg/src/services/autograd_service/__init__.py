"""Tensor engine service initialization"""
