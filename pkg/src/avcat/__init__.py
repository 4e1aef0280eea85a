"""Averaging and catastrophe-surface toolkit for periodically forced ODE families."""
