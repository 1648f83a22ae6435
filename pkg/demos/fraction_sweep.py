"""Accuracy against training fraction on the simulator; writes plot data."""
import argparse
import logging

from genprof.evaluation import write_plot_data
from genprof.pipeline import simulator_experiment
from genprof.workloadsim import default_model

parser = argparse.ArgumentParser(description=__doc__)
parser.add_argument("--fractions", default="0.05,0.1,0.2,0.4")
parser.add_argument("--n-d", type=int, default=10)
parser.add_argument("--seed", type=int, default=0)
parser.add_argument("--out", default="fraction_sweep.csv")
args = parser.parse_args()
logging.basicConfig(level=logging.WARNING)

model = default_model()
points = []
print("fraction  trained  mean_dtw  baseline  ratio")
for fraction in map(float, args.fractions.split(",")):
    res = simulator_experiment(model, fraction, n_d=args.n_d, seed=args.seed)
    rep = res.report
    rel_time = len(res.train_ids) / len(model.catalog)
    points.append((fraction, rep.mean_generative, rel_time))
    print(f"{fraction:8.2f}  {len(res.train_ids):7d}  {rep.mean_generative:8.4f}  "
          f"{rep.mean_baseline:8.4f}  {rep.mean_generative / rep.mean_baseline:5.3f}")

write_plot_data(args.out, points)
print(f"wrote {args.out}")
