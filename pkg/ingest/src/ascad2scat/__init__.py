"""ascad2scat: convert ASCAD-style HDF5 trace databases to SCAT files."""

from .convert import IngestJob, Mismatch, MissingDataset, ShapeMismatch, convert, verify
from .scat import read_scat

__version__ = "0.1.0"
