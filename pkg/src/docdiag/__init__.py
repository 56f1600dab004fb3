"""Assessment workflows over documents: causal graph model, execution with
pluggable resolvers, boolean SCM analysis, and agreement metrics."""

__version__ = "0.1.0"
