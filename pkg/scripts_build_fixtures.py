"""Dev script: synthesize the robust pulse fixtures shipped with the tests."""
import json
import numpy as np
from bragg_forge.optimizer import OptimizationConfig, optimize_pulse, benchmark_pair
from bragg_forge.waveforms import write_waveform

mirror_cfg = OptimizationConfig(role="mirror", order=3, n_segments=220,
                                cutoff=2*np.pi*80e3, iterations=2500, seed=7,
                                validate_every=50)
res_m = optimize_pulse(mirror_cfg)
write_waveform(res_m.waveform, "tests/fixtures/robust_mirror_order3.json")
print("MIRROR best validation cost:", res_m.trace.best_cost, "at", res_m.trace.best_iteration, flush=True)

rep = benchmark_pair(mirror_cfg, optimized=res_m.waveform)
print("MIRROR benchmark:", json.dumps(rep.summary(), indent=1), flush=True)

bs_cfg = OptimizationConfig(role="beamsplitter", order=3, n_segments=110,
                            cutoff=2*np.pi*95e3, iterations=2500, seed=3,
                            validate_every=50)
res_b = optimize_pulse(bs_cfg)
write_waveform(res_b.waveform, "tests/fixtures/robust_beamsplitter_order3.json")
print("BS best validation cost:", res_b.trace.best_cost, "at", res_b.trace.best_iteration, flush=True)

rep_b = benchmark_pair(bs_cfg, optimized=res_b.waveform)
print("BS benchmark:", json.dumps(rep_b.summary(), indent=1), flush=True)
