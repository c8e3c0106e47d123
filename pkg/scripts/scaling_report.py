"""Circuit evaluations per sample versus input resolution.

Usage: python3 scripts/scaling_report.py

For each ansatz shape the quantum cost is measured by running one
gradient-mode forward pass, and compared with the closed-form budget.
The count depends on the ansatz shape only, never on the image size.
"""
import numpy as np

from biqc.ansatz import AnsatzConfig
from biqc.model import BiqcConfig, biqc_forward, circuit_budget, init_params

SIZES = ((8, 4), (32, 4), (64, 32), (224, 32))
ANSATZE = (AnsatzConfig(2, 1, 1), AnsatzConfig(4, 2, 2), AnsatzConfig(6, 2, 2))


def main() -> None:
    print(f"{'qubits':>6} {'blocks':>6} {'layers':>6} {'input':>8} {'patch':>5} {'circuits':>9} {'gates':>9} {'budget':>7}")
    for ansatz in ANSATZE:
        for side, patch in SIZES:
            cfg = BiqcConfig(image_h=side, image_w=side, patch_size=patch, ansatz=ansatz)
            trace = biqc_forward(cfg, init_params(cfg, 0), np.zeros((1, side, side)), grad=True)
            print(f"{ansatz.num_qubits:>6} {ansatz.num_blocks:>6} {ansatz.layers_per_block:>6} "
                  f"{f'{side}x{side}':>8} {patch:>5} {trace.circuits_per_sample():>9.0f} "
                  f"{trace.counter.gates:>9} {circuit_budget(cfg)['circuits']:>7}")


if __name__ == "__main__":
    main()
