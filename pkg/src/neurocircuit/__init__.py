"""Depression classification from resting-state fMRI on a self-contained
autodiff engine: gated multi-path fusion, hierarchical circuit pooling, and
counterfactual circuit attention, with synthetic cohorts for end-to-end tests.
"""

__version__ = "0.1.0"
