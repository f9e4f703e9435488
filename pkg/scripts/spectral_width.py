"""Spectral baseline across kernel widths, for both eigenvector scalings.

The symmetric scaling ranks the eigenvector of the normalized affinity directly;
random_walk divides it by the square root of the degree first.

    python scripts/spectral_width.py [--dataset dataset2] [--quick]
"""
import numpy as np
from common import base_parser, run

from ppcurves.experiment import DatasetSpec, ExperimentConfig, MethodParams


def main():
    p = base_parser(__doc__, "results/spectral")
    p.add_argument("--dataset", default="dataset2", choices=["dataset1", "dataset2"])
    a = p.parse_args()
    n, atoms = (30, 600) if a.quick else (250, 10000)
    grid = {"spectral_sigma": [float(s) for s in np.geomspace(0.05, 2.0, 3 if a.quick else 8)],
            "spectral_scaling": ["symmetric", "random_walk"]}
    config = ExperimentConfig(dataset=DatasetSpec(a.dataset, n, atoms, 0.1), seeds=a.seeds,
                              methods=["spectral"], params=MethodParams(ot="sinkhorn", reg=1e-2),
                              grid=grid)
    run(config, f"{a.out}_{a.dataset}")


if __name__ == "__main__":
    main()
