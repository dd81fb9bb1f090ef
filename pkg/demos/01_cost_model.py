"""Walk through the analytic cost model for the built-in model presets.

Prints parameter counts, per-iteration FLOPs, and memory footprints, then
shows why a 4 GB edge board cannot hold the larger presets on its own.

Run:  python3 demos/01_cost_model.py
"""

from edgetrainsim.workload import (MODEL_PRESETS, TrainingJob,
                                   default_edge_job, flops_per_iteration,
                                   full_replication_memory, param_count,
                                   state_bytes)

# The reference workload: global batch 128, sequence length 32.
fp32 = TrainingJob(global_batch=128, seq_len=32, micro_batch=128)
runtime = default_edge_job()  # half precision, micro-batch 8

print(f"{'model':12} {'params':>14} {'TFLOPs/iter':>12} "
      f"{'fp32 footprint':>15} {'runtime state':>14}")
for name, spec in MODEL_PRESETS.items():
    params = param_count(spec)
    flops = flops_per_iteration(spec, fp32)
    mem = full_replication_memory(spec, fp32)
    state = state_bytes(spec, runtime)
    print(f"{name:12} {params:>14,} {flops / 1e12:>12.2f} "
          f"{mem / 1e9:>13.2f}GB {state / 1e9:>12.2f}GB")

nano_usable = 4e9 * 0.9
print(f"\nA Jetson-Nano-class board offers about {nano_usable / 1e9:.1f} GB "
      "to the training runtime.")
for name, spec in MODEL_PRESETS.items():
    fits = full_replication_memory(spec, runtime) <= nano_usable
    verdict = "fits" if fits else "needs model partitioning (TP or PP)"
    print(f"  {name:12} full replica {verdict}")
