import os

# deterministic threading layer, chosen before numba first loads
os.environ.setdefault("NUMBA_THREADING_LAYER", "workqueue")
