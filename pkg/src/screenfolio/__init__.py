"""
Screenfolio - agentic stock screening and high-dimensional portfolio weighting.

Screens a stock universe with rule, sentiment, analyst, logistic and
Novy-Marx agents, estimates the precision matrix of the screened names and
backtests closed-form GMV/MV/MSR portfolios net of transaction costs.
"""

__version__ = "1.0.0"
__app_name__ = "Screenfolio"
