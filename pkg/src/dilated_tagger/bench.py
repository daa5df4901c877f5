"""Decode-throughput benchmark and sequential critical-path accounting.

The protocol: batches of integer ids are prepared before the clock starts
(tokenization/feature work is identical across models and excluded), one
untimed burn-in pass runs per configuration, then each timed pass covers
the whole dataset. Alongside wall-clock numbers the harness reports the
instrumented critical-path length: layer applications for convolutional
encoders, timesteps per direction for the recurrent one, plus D^2-per-token
steps when decoding runs Viterbi. Those counters, unlike seconds, are
exactly reproducible.

Reference multipliers reported for this architecture family on GPU
hardware (greedy dilated encoder 14.10x, greedy recurrent 9.92x, dilated
encoder + chain decoding 1.28x, all relative to the recurrent+chain
baseline) are documentation constants, not CPU acceptance targets.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field

from .data import TaggedSequence, make_batches
from .model import TaggerModel

REFERENCE_SPEEDUPS = {
    "idcnn": 14.10,
    "bilstm": 9.92,
    "idcnn-crf": 1.28,
    "bilstm-crf": 1.0,
}


@dataclass
class StepCounter:
    steps: int = 0

    def add(self, n: int) -> None:
        self.steps += n

    def reset(self) -> None:
        self.steps = 0


@dataclass
class BenchRow:
    model: str
    batch_size: int
    mean_s: float
    std_s: float
    tokens_per_s: float
    critical_path: int
    multiplier: float = 0.0
    multiplier_std: float = 0.0
    note: str = ""


@dataclass
class BenchReport:
    rows: list[BenchRow] = field(default_factory=list)
    baseline: str = ""
    repeats: int = 0
    n_tokens: int = 0

    COLUMNS = ("model", "batch_size", "mean_s", "std_s", "tokens_per_s",
               "critical_path", "multiplier", "multiplier_std", "note")

    def best_row(self, model: str) -> BenchRow | None:
        timed = [r for r in self.rows if r.model == model and not r.note]
        return min(timed, key=lambda r: r.mean_s) if timed else None

    def to_tsv(self) -> str:
        lines = ["\t".join(self.COLUMNS)]
        for r in self.rows:
            lines.append("\t".join([
                r.model, str(r.batch_size), f"{r.mean_s:.6f}", f"{r.std_s:.6f}",
                f"{r.tokens_per_s:.1f}", str(r.critical_path),
                f"{r.multiplier:.2f}", f"{r.multiplier_std:.2f}", r.note,
            ]))
        return "\n".join(lines) + "\n"

    def to_json(self) -> dict:
        return {
            "baseline": self.baseline,
            "repeats": self.repeats,
            "n_tokens": self.n_tokens,
            "rows": [
                {c: getattr(r, c) for c in self.COLUMNS} for r in self.rows
            ],
        }

    def write(self, out_dir, figures: bool = True) -> list[str]:
        from pathlib import Path

        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        written = []
        tsv = out / "bench.tsv"
        tsv.write_text(self.to_tsv(), encoding="utf-8")
        written.append(str(tsv))
        js = out / "bench.json"
        js.write_text(json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n",
                      encoding="utf-8")
        written.append(str(js))
        if figures:
            from .plots import render_bench_figures

            written.extend(render_bench_figures(self, out))
        return written


def measured_critical_path(model: TaggerModel, batches) -> int:
    counter = StepCounter()
    for batch in batches:
        model.predict_batch(batch, counter=counter)
    return counter.steps


def bench(models: dict[str, TaggerModel], seqs: list[TaggedSequence],
          batch_sizes, repeats: int = 3, baseline: str | None = None,
          max_batch_tokens: int = 2_000_000) -> BenchReport:
    """Time every (model, batch size) pair over the dataset.

    Configurations whose largest padded batch exceeds max_batch_tokens are
    skipped with a note instead of being run.
    """
    if baseline is None:
        baseline = next(iter(models))
    if baseline not in models:
        raise ValueError(f"baseline {baseline!r} is not one of the models")
    report = BenchReport(baseline=baseline, repeats=repeats,
                         n_tokens=sum(len(s) for s in seqs))

    for name, model in models.items():
        for bs in batch_sizes:
            batches = make_batches(seqs, bs)
            widest = max(b.word_ids.size for b in batches)
            if widest > max_batch_tokens:
                report.rows.append(BenchRow(
                    model=name, batch_size=bs, mean_s=0.0, std_s=0.0,
                    tokens_per_s=0.0, critical_path=0,
                    note=f"skipped: batch of {widest} padded tokens exceeds budget",
                ))
                continue
            critical = measured_critical_path(model, batches)  # burn-in pass too
            times = []
            for _ in range(repeats):
                t0 = time.perf_counter()
                for batch in batches:
                    model.predict_batch(batch)
                times.append(time.perf_counter() - t0)
            mean_s = sum(times) / len(times)
            if len(times) > 1:
                var = sum((t - mean_s) ** 2 for t in times) / (len(times) - 1)
                std_s = var ** 0.5
            else:
                std_s = 0.0
            report.rows.append(BenchRow(
                model=name, batch_size=bs, mean_s=mean_s, std_s=std_s,
                tokens_per_s=report.n_tokens / mean_s if mean_s > 0 else 0.0,
                critical_path=critical,
            ))

    base_best = report.best_row(baseline)
    if base_best is not None:
        for row in report.rows:
            if row.note or row.mean_s <= 0:
                continue
            row.multiplier = base_best.mean_s / row.mean_s
            # first-order propagation of this row's own timing spread
            row.multiplier_std = base_best.mean_s * row.std_s / (row.mean_s ** 2)
    return report
