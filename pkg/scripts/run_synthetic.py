"""Train and evaluate several models on the reference synthetic set, then print the results table.

    python3 scripts/run_synthetic.py --models LogReg NCM SCOT --embeddings external learnable
"""

import argparse
import sys

from neuclick import pipeline
from neuclick.config import ExperimentConfig
from neuclick.evaluation import emit_results_table


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default="configs/synthetic.yaml")
    ap.add_argument("--models", nargs="+", default=["LogReg", "SessionGRU", "NCM", "SCOT"])
    ap.add_argument("--embeddings", nargs="+", default=["external"])
    ap.add_argument("--output-dir", default="runs")
    ap.add_argument("--force", action="store_true")
    ap.add_argument("--csv")
    args = ap.parse_args(argv)

    base = ExperimentConfig.load(args.config).with_overrides({"output_dir": args.output_dir})
    reports = []
    for kind in args.models:
        for emb in args.embeddings:
            cfg = base.with_overrides({"model.kind": kind, "embedding.kind": emb})
            run_dir = pipeline.run_dir_for(cfg)
            if args.force or not (run_dir / pipeline.CHECKPOINT_FILE).exists():
                pipeline.run_train(cfg, force=True)
            report = pipeline.run_evaluate(run_dir)
            reports.append(report)
            print(f"{kind:>18} {emb:>9}  auc={report.rows[0].auc:.4f}  bayes={report.extras['bayes_auc']:.4f}",
                  file=sys.stderr)
    table = emit_results_table(reports)
    sys.stdout.write(table.to_text())
    if args.csv:
        with open(args.csv, "w") as fh:
            fh.write(table.to_csv())


if __name__ == "__main__":
    main()
