"""Same noisy PMU window, two indices.

A small load window around lambda = 1 is measured repeatedly with
independent magnitude and angle noise. The circle index uses one snapshot at
a time; the Thevenin baseline needs a least-squares fit over the window and
amplifies the noise.

    python3 demos/noise_comparison.py [realizations]
"""
import sys

from pmuvsi.harness import ScenarioConfig, ScenarioKind, run_scenario

n = int(sys.argv[1]) if len(sys.argv) > 1 else 300
cfg = ScenarioConfig(ScenarioKind.NOISE_STUDY, sigma_v=0.001, sigma_theta=0.01, seed=2024, realizations=n)
s = run_scenario(cfg).summary

print(f"bus {s['bus']}, {n} realizations, sigma_v={cfg.sigma_v} p.u., sigma_theta={cfg.sigma_theta} deg")
print(f"  circle index  std = {s['std_vsi']:.4f}")
print(f"  Thevenin LTI  std = {s['std_lti']:.4f}")
print(f"  ratio             = {s['std_ratio']:.3f}")
