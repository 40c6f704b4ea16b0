"""Dialogue state tracking with SQL-shaped state changes and in-context learning.

States are plain dicts mapping "domain-slot" keys to normalized value strings.
State changes use the same shape, with the reserved value "NONE" marking a
slot deletion.
"""

__version__ = "0.1.0"

from sqldst.state import DELETE_VALUE, apply_change, diff_states, normalize_value

__all__ = ["DELETE_VALUE", "apply_change", "diff_states", "normalize_value", "__version__"]
