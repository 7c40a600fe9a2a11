"""Long-horizon time-series forecasting with windowed attention, recurrent
seasonal-trend distillation, and a conditional flow head."""

__version__ = "0.1.0"
