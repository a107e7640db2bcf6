"""Monte Carlo backtesting of chain ladder reserves and their Mack m.s.e."""

__version__ = "0.1.0"
