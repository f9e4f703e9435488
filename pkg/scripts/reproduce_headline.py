"""Dataset 1 headline run: N=250 time points, 10000 atoms, five seeds, all three methods.

    python scripts/reproduce_headline.py [--dataset dataset2] [--quick]
"""
from common import base_parser, run

from ppcurves.experiment import DatasetSpec, ExperimentConfig, MethodParams


def main():
    p = base_parser(__doc__, "results/headline", repeats=5)
    p.add_argument("--dataset", default="dataset1", choices=["dataset1", "dataset2"])
    a = p.parse_args()
    n, atoms = (40, 800) if a.quick else (250, 10000)
    config = ExperimentConfig(dataset=DatasetSpec(a.dataset, n, atoms, 0.1), seeds=a.seeds,
                              methods=["ppc", "tsp", "spectral"],
                              params=MethodParams(ot="sinkhorn", reg=1e-2))
    run(config, f"{a.out}_{a.dataset}")


if __name__ == "__main__":
    main()
