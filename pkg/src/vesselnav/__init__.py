"""Grid-based marine navigation: environment, planner, local view, and DQN agents."""

__version__ = "0.1.0"
