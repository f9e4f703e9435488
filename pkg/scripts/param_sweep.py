"""Sensitivity of the principal curve to the length penalty and kernel bandwidth.

Sweeps a log-spaced (beta, h) grid at a fixed dataset size; cells.csv then holds
one mean error per pair, ready for a heatmap.

    python scripts/param_sweep.py [--dataset dataset2] [--points 10] [--quick]
"""
import numpy as np
from common import base_parser, run

from ppcurves.experiment import DatasetSpec, ExperimentConfig, MethodParams


def main():
    p = base_parser(__doc__, "results/params")
    p.add_argument("--dataset", default="dataset1", choices=["dataset1", "dataset2"])
    p.add_argument("--points", type=int, default=10, help="grid points per axis")
    p.add_argument("--n", type=int, default=100)
    p.add_argument("--atoms", type=int, default=4000)
    a = p.parse_args()
    k = 2 if a.quick else a.points
    n, atoms = (20, 200) if a.quick else (a.n, a.atoms)
    grid = {"beta": [float(b) for b in np.geomspace(1e-3, 1.0, k)],
            "h": [float(h) for h in np.geomspace(1e-3, 1e-1, k)]}
    config = ExperimentConfig(dataset=DatasetSpec(a.dataset, n, atoms, 0.1), seeds=a.seeds,
                              methods=["ppc"], params=MethodParams(ot="sinkhorn", reg=1e-2),
                              grid=grid)
    run(config, f"{a.out}_{a.dataset}")


if __name__ == "__main__":
    main()
