"""The four-configuration benchmark: both model variants crossed with both
loss variants, trained per seed with everything else held fixed, then
averaged into a six-row comparison table (train/test x IDH/VBH/Total).

Also evaluates the directional findings the benchmark is meant to show:
the manifold term raises train error and shrinks the generalization gap
for both model variants.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .training import GROUPS, train

CONFIG_ORDER = ("carn-loss_p", "cnn-loss_p", "cnn-loss_t", "carn-loss_t")

_CONFIG_FIELDS = {
    "carn-loss_p": ("carn", "loss_p"),
    "cnn-loss_p": ("cnn-baseline", "loss_p"),
    "cnn-loss_t": ("cnn-baseline", "loss_t"),
    "carn-loss_t": ("carn", "loss_t"),
}


@dataclass
class AblationResult:
    """Per-config mean metrics over seeds plus the directional findings."""

    seeds: list
    cells: dict          # (config, split, group) -> mean mae over seeds
    std_cells: dict      # (config, split, group) -> mean std over seeds
    per_seed: dict       # (config, seed, split, group) -> mae
    findings: dict = field(default_factory=dict)

    def table_rows(self):
        rows = []
        for group in GROUPS:
            for split in ("train", "test"):
                row = [group, split]
                for name in CONFIG_ORDER:
                    mae = self.cells[(name, split, group)]
                    std = self.std_cells[(name, split, group)]
                    row.append(f"{mae:.4f}+-{std:.4f}")
                rows.append(row)
        return rows

    def text(self):
        header = ["group", "split"] + list(CONFIG_ORDER)
        rows = [header] + self.table_rows()
        widths = [max(len(str(r[c])) for r in rows) for c in range(len(header))]
        lines = ["  ".join(str(v).ljust(w) for v, w in zip(row, widths)) for row in rows]
        lines.append("")
        lines.append(f"seeds: {', '.join(str(s) for s in self.seeds)}")
        for key, val in self.findings.items():
            lines.append(f"finding {key}: {val}")
        return "\n".join(lines)

    def write_csv(self, path):
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(("config", "split", "group", "mae_mm", "std_mm"))
            for name in CONFIG_ORDER:
                for split in ("train", "test"):
                    for group in GROUPS:
                        writer.writerow((
                            name, split, group,
                            repr(self.cells[(name, split, group)]),
                            repr(self.std_cells[(name, split, group)]),
                        ))


def run_ablation(base_cfg, seeds, progress=None):
    """Train and evaluate all four configurations for every seed.

    Each run gets its own subdirectory ``<out_dir>/<config>_seed<seed>``.
    ``progress`` is an optional callable taking a status string.
    """
    seeds = list(seeds)
    if not seeds:
        raise ValueError("need at least one seed")
    base_out = Path(base_cfg.out_dir)
    per_seed = {}
    stds = {}
    for seed in seeds:
        for name in CONFIG_ORDER:
            variant, loss = _CONFIG_FIELDS[name]
            cfg = base_cfg.with_overrides(
                variant=variant, loss=loss, seed=seed,
                out_dir=str(base_out / f"{name}_seed{seed}"),
            )
            if progress:
                progress(f"training {name} seed {seed}")
            result = train(cfg)
            for (split, group), (mae, std) in result.report.groups.items():
                per_seed[(name, seed, split, group)] = mae
                stds[(name, seed, split, group)] = std

    cells = {}
    std_cells = {}
    for name in CONFIG_ORDER:
        for split in ("train", "test"):
            for group in GROUPS:
                vals = [per_seed[(name, s, split, group)] for s in seeds]
                svals = [stds[(name, s, split, group)] for s in seeds]
                cells[(name, split, group)] = float(np.mean(vals))
                std_cells[(name, split, group)] = float(np.mean(svals))

    result = AblationResult(seeds=seeds, cells=cells, std_cells=std_cells,
                            per_seed=per_seed)
    result.findings = _findings(result)

    base_out.mkdir(parents=True, exist_ok=True)
    result.write_csv(base_out / "ablation.csv")
    (base_out / "report.txt").write_text(result.text() + "\n", encoding="utf-8")
    return result


def _gap(cells, name):
    return cells[(name, "test", "Total")] - cells[(name, "train", "Total")]


def _findings(result):
    """Directional effects of the manifold term, averaged over seeds."""
    cells = result.cells
    finite = all(np.isfinite(v) for v in cells.values())
    return {
        "train_error_raised_carn": bool(
            cells[("carn-loss_t", "train", "Total")]
            > cells[("carn-loss_p", "train", "Total")]
        ),
        "gap_reduced_carn": bool(_gap(cells, "carn-loss_t") < _gap(cells, "carn-loss_p")),
        "gap_reduced_cnn": bool(_gap(cells, "cnn-loss_t") < _gap(cells, "cnn-loss_p")),
        "all_finite": bool(finite),
    }
