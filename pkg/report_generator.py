"""
Text reports and result tables for extraction, evaluation and experiments
"""

from __future__ import annotations

import pandas as pd

from metrics import MEAN_ROW_ID, summarize_by_radius

SWEEP_RADIUS = 1.0
SWEEP_COLUMNS = ["K", "f1_r1", "betti0", "betti1", "mean_tau"]
CODEC_ABLATION_COLUMNS = ["noise_sigma", "codec", "failures", "total", "failure_rate"]
VOTE_ABLATION_COLUMNS = ["variant", "K", "R", "precision", "recall", "f1", "betti0", "betti1"]


class ExtractionReportGenerator:
    """Sidecar reports and summary tables for the CLI commands"""

    def format_extract_report(self, case_id, result, tau_mode):
        """Sidecar ``key=value`` report of one aggregation"""
        sizes = ",".join(str(s) for s in result.per_sample_sizes)
        lines = [
            f"case_id={case_id}",
            f"K={result.K}",
            f"tau={result.tau_used}",
            f"tau_mode={tau_mode}",
            f"per_sample_sizes={sizes}",
            f"aggregated_size={len(result.aggregated)}",
        ]
        return "\n".join(lines) + "\n"

    def parse_extract_report(self, text):
        report = {}
        for line in text.splitlines():
            key, _, value = line.partition("=")
            if key:
                report[key] = value
        report["K"] = int(report["K"])
        report["tau"] = int(report["tau"])
        report["per_sample_sizes"] = [int(v) for v in report["per_sample_sizes"].split(",") if v]
        report["aggregated_size"] = int(report["aggregated_size"])
        return report

    def loss_history_table(self, history: pd.DataFrame):
        return history[["epoch", "train_loss", "val_loss"]].copy()

    def eval_summary(self, table: pd.DataFrame):
        return summarize_by_radius(table)

    def format_eval_summary(self, table: pd.DataFrame):
        """Human-readable per-radius means"""
        summary = summarize_by_radius(table)
        cases = table[table["case_id"] != MEAN_ROW_ID]
        text = ["=" * 60, f"CENTERLINE EVALUATION ({cases['case_id'].nunique()} cases)", "=" * 60]
        text.append(f"{'R':>6} {'precision':>10} {'recall':>10} {'f1':>10} {'betti0':>8} {'betti1':>8}")
        text.append("-" * 60)
        for row in summary.itertuples(index=False):
            text.append(
                f"{row.R:>6g} {row.precision:>10.4f} {row.recall:>10.4f} {row.f1:>10.4f} "
                f"{row.betti0:>8.2f} {row.betti1:>8.2f}"
            )
        flagged = sorted(cases.loc[cases["degenerate"].astype(int) == 1, "case_id"].unique())
        if flagged:
            text.append(f"degenerate (empty prediction or ground truth): {', '.join(flagged)}")
        return "\n".join(text)

    def sweep_row(self, K, table: pd.DataFrame, taus):
        """Mean F1@R=1 and Betti numbers of one K setting"""
        summary = summarize_by_radius(table)
        at_one = summary[summary["R"] == SWEEP_RADIUS]
        f1_r1 = float(at_one["f1"].iloc[0]) if len(at_one) else float("nan")
        return {
            "K": int(K),
            "f1_r1": f1_r1,
            "betti0": float(summary["betti0"].mean()),
            "betti1": float(summary["betti1"].mean()),
            "mean_tau": float(sum(taus) / len(taus)),
        }

    def sweep_table(self, rows):
        return pd.DataFrame(rows, columns=SWEEP_COLUMNS)

    def codec_ablation_table(self, rows):
        df = pd.DataFrame(rows, columns=CODEC_ABLATION_COLUMNS[:-1])
        df["failure_rate"] = df["failures"] / df["total"]
        return df[CODEC_ABLATION_COLUMNS]

    def vote_ablation_table(self, variants):
        """variants: (name, K, metrics table) triples"""
        frames = []
        for name, K, table in variants:
            summary = summarize_by_radius(table)
            summary.insert(0, "K", int(K))
            summary.insert(0, "variant", name)
            frames.append(summary)
        return pd.concat(frames, ignore_index=True)[VOTE_ABLATION_COLUMNS]
