"""
Edge/cloud deployment, frame protocol and passive sniffer
"""
