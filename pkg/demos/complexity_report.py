"""
Parameter and Multi-Adds budget
===============================

Counts come from a layer walk over the config. They are exact integers and
match the scalars the model actually allocates.
"""
from lckasr.complexity import compare_variants, count_multiadds
from lckasr.model import ModelConfig, build

cfg = ModelConfig(scale=2)
report = count_multiadds(cfg, 720, 1280)
print(f"params {report.total_params:,}  multi-adds {report.total_macs / 1e9:.2f} G")
print("allocated", build(cfg).num_scalars())

# the five heaviest layers
for row in sorted(report.rows, key=lambda r: -r.macs)[:5]:
    print(f"  {row.name:28s} {row.kind:10s} {row.macs / 1e6:8.1f} M")

# swapping the attention variant only changes the attention layers
print(compare_variants(cfg).to_text())

# scale only changes the reconstruction conv and the LR size the trunk runs at
for s in (2, 3, 4):
    r = count_multiadds(cfg.with_(scale=s))
    print(s, r.total_params, f"{r.total_macs / 1e9:.2f} G")
