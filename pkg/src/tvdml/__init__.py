"""Time-varying heterogeneous treatment effects with delayed carry-over, estimated by sequential DML."""
from .exceptions import ConfigError, DataError, EstimationError, SchemaError, TvdmlError
from .panel import ColumnSchema, PanelDataset, load_panel_csv, tilde_x, validate, write_panel_csv

__version__ = "0.1.0"
