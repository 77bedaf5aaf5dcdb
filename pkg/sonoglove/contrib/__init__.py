"""
Thin integrations between `sonoglove` and its progress-bar stack.
"""
__all__ = []
