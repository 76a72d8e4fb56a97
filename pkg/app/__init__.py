"""
Grade-aware Course Recommender
"""
__version__ = "1.0.0"
