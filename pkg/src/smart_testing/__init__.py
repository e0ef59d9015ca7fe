"""Context-aware testing of classifiers.

Hypotheses about where a model fails are generated from context, turned into
slice predicates, and kept only if a significance test on held-out data supports
them.
"""

__version__ = "0.1.0"
