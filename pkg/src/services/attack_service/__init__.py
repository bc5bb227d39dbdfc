"""
Evasion attacks: white-box PGD on a surrogate with transfer evaluation, and
query-based attacks against the served target with exact query accounting
"""
