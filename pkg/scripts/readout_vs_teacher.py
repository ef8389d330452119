"""NCM with a readout fraction against pure teacher forcing, over several training seeds.

Prints per-seed AUCs with a paired session bootstrap, then the seed-averaged difference.
"""

import argparse

from neuclick import pipeline
from neuclick.config import ExperimentConfig
from neuclick.diffmath import Rng
from neuclick.evaluation import bootstrap_compare, roc_auc
from neuclick.training import score_sessions, train


def scores(cfg, data):
    model = pipeline.build_run_model(cfg, data)
    train(model, data.train, data.val, cfg.train)
    return score_sessions(model, data.test, rng=Rng(cfg.seed).child("evaluate"))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default="configs/synthetic.yaml")
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--readout", type=float, default=0.2)
    ap.add_argument("--fatigue", type=float)
    args = ap.parse_args(argv)

    cfg = ExperimentConfig.load(args.config).with_overrides({"model.kind": "NCM"})
    if args.fatigue is not None:
        cfg = cfg.with_overrides({"data.fatigue": args.fatigue})
    data = pipeline.prepare_data(cfg)
    print(f"fatigue={cfg.data.fatigue}  bayes={pipeline.bayes_ceiling(data):.4f}")
    deltas = []
    for seed in range(args.seeds):
        a = scores(cfg.with_overrides({"train.seed": seed, "train.readout_fraction": args.readout}), data)
        b = scores(cfg.with_overrides({"train.seed": seed, "train.readout_fraction": 0.0}), data)
        res = bootstrap_compare(a["probs"], b["probs"], a["labels"], a["session"], n=cfg.bootstrap_samples,
                                seed=seed)["auc"]
        auc_a, auc_b = roc_auc(a["probs"], a["labels"]), roc_auc(b["probs"], b["labels"])
        deltas.append(auc_a - auc_b)
        print(f"seed {seed}: readout {auc_a:.4f}  teacher {auc_b:.4f}  delta {auc_a - auc_b:+.4f}  "
              f"95% CI [{res.ci_low:+.4f}, {res.ci_high:+.4f}]")
    print(f"mean delta {sum(deltas) / len(deltas):+.4f}")


if __name__ == "__main__":
    main()
