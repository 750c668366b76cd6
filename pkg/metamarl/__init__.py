"""
MetaMARL - Meta-learning initial policies that anticipate how learning peers adapt
"""

__version__ = "0.1.0"
