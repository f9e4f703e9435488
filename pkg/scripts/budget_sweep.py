"""Fixed atom budget, varying number of time points: how finely should one sample in time?

With 10000 atoms split evenly, more time points means noisier batches. Each cell
reports the mean Kendall error of every method.

    python scripts/budget_sweep.py [--dataset dataset2] [--n 25 50 100 250 500] [--quick]
"""
from common import base_parser, run

from ppcurves.experiment import DatasetSpec, ExperimentConfig, MethodParams


def main():
    p = base_parser(__doc__, "results/budget")
    p.add_argument("--dataset", default="dataset1", choices=["dataset1", "dataset2"])
    p.add_argument("--n", type=int, nargs="+", default=[25, 50, 100, 250, 500])
    p.add_argument("--atoms", type=int, default=10000)
    a = p.parse_args()
    ns, atoms = ([10, 20], 200) if a.quick else (a.n, a.atoms)
    config = ExperimentConfig(dataset=DatasetSpec(a.dataset, max(ns), atoms, 0.1), seeds=a.seeds,
                              methods=["ppc", "tsp", "spectral"],
                              params=MethodParams(ot="sinkhorn", reg=1e-2), grid={"n": ns})
    run(config, f"{a.out}_{a.dataset}")


if __name__ == "__main__":
    main()
