"""
Seeded desk-scale experiment pipelines and their reports
"""
