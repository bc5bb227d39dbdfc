"""
Partitioned surrogates: backbone plus adaptation module, trained by feature and output distillation
"""
