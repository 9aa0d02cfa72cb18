import time

import numpy as np

from hjminmax.family import PiecewiseFunction
from hjminmax.flow import FlowConfig, HamiltonianModel
from hjminmax.oracles import FDConfig, fd_viscosity
from hjminmax.scheme import (SubdivisionSchedule, iterate, semigroup_defect)

model = HamiltonianModel.from_source("-p^3 + p^2 + p", 11.0, p_only=True)
v = PiecewiseFunction.from_expressions(
    [-0.25, 0.0, 1.25],
    ["1.5*x + 0.0625", "-x^2 + x", "x^2 - x", "1.5*x - 1.5625"],
    1.5)
cfg = FlowConfig(5e-3)
T = 0.75
xg = np.linspace(-1.0, 1.0, 161)

t0 = time.time()
d = semigroup_defect(model, v, T / 2, T, xg, cfg)
print(f"defect(s=T/2,t=T) dx=0.0125 with kink insertion: {d:.5f}  "
      f"[{time.time()-t0:.0f}s]", flush=True)
t0 = time.time()
d2 = semigroup_defect(model, v, T / 2, T, np.linspace(-1.0, 1.0, 321), cfg)
print(f"defect at dx=0.00625: {d2:.5f}  (drift {abs(d2-d):.2e})  "
      f"[{time.time()-t0:.0f}s]", flush=True)

rec = np.linspace(0.0, T, 129)
fd = fd_viscosity(model, v, T, xg, FDConfig(dx=1e-3), record_times=rec)
ref = fd.u[-1]

for n in (2, 8, 32, 128):
    t0 = time.time()
    sched = SubdivisionSchedule.uniform(T, n)
    fld = iterate(model, v, sched, xg, cfg)
    err = float(np.max(np.abs(fld.u[-1] - ref)))
    print(f"n={n:4d}: sup vs FD(1e-3) = {err:.5f}  [{time.time()-t0:.0f}s]",
          flush=True)
