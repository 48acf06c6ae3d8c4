"""Re-measure every frozen bound constant at its reference config.

Prints a dict literal to paste into ``tauresnet/calibration.py``.

    python demos/calibrate.py
"""

import time

from tauresnet.calibration import FROZEN, calibrate

out = {}
for name in FROZEN:
    t = time.perf_counter()
    out[name] = calibrate(name)
    print(f"# {name:20s} {out[name]!r:>24}   ({time.perf_counter() - t:.1f}s)", flush=True)

print("FROZEN = {")
for k, v in out.items():
    print(f"    {k!r}: {v!r},")
print("}")
