import time

import numpy as np

import hjminmax.scheme as S
from hjminmax.family import PiecewiseFunction
from hjminmax.flow import FlowConfig, HamiltonianModel
from hjminmax.oracles import FDConfig, fd_viscosity
from hjminmax.scheme import SubdivisionSchedule, iterate

model = HamiltonianModel.from_source("-p^3 + p^2 + p", 11.0, p_only=True)
v = PiecewiseFunction.from_expressions(
    [-0.25, 0.0, 1.25],
    ["1.5*x + 0.0625", "-x^2 + x", "x^2 - x", "1.5*x - 1.5625"],
    1.5)
cfg = FlowConfig(5e-3)
T = 0.75
xg = np.linspace(-1.0, 1.0, 161)

t0 = time.time()
fd1 = fd_viscosity(model, v, T, xg, FDConfig(dx=1e-3))
print(f"FD(1e-3) [{time.time()-t0:.0f}s]", flush=True)
t0 = time.time()
fd4 = fd_viscosity(model, v, T, xg, FDConfig(dx=2.5e-4))
print(f"FD(2.5e-4) [{time.time()-t0:.0f}s]", flush=True)
gap = float(np.max(np.abs(fd1.u[-1] - fd4.u[-1])))
print(f"FD self-gap 1e-3 vs 2.5e-4 at T: {gap:.5f}", flush=True)

for n in (32, 128):
    t0 = time.time()
    with_k = iterate(model, v, SubdivisionSchedule.uniform(T, n), xg, cfg)
    print(f"n={n} insertion: vs FD(1e-3) "
          f"{float(np.max(np.abs(with_k.u[-1] - fd1.u[-1]))):.5f}  "
          f"vs FD(2.5e-4) {float(np.max(np.abs(with_k.u[-1] - fd4.u[-1]))):.5f}"
          f"  [{time.time()-t0:.0f}s]", flush=True)

    orig = S.resample_step
    S.resample_step = (lambda model, datum, s, t, xs, values, cfg,
                       resolution=257, **kw:
                       PiecewiseFunction.from_samples(xs, values))
    t0 = time.time()
    plain = iterate(model, v, SubdivisionSchedule.uniform(T, n), xg, cfg)
    S.resample_step = orig
    print(f"n={n} plain:     vs FD(1e-3) "
          f"{float(np.max(np.abs(plain.u[-1] - fd1.u[-1]))):.5f}  "
          f"vs FD(2.5e-4) {float(np.max(np.abs(plain.u[-1] - fd4.u[-1]))):.5f}"
          f"  [{time.time()-t0:.0f}s]", flush=True)
    print(f"n={n} insertion vs plain: "
          f"{float(np.max(np.abs(with_k.u[-1] - plain.u[-1]))):.5f}",
          flush=True)
