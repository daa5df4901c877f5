"""Figure rendering for benchmark reports (written next to the TSV/JSON)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402


def render_bench_figures(report, out_dir) -> list[str]:
    """Decode-time sweep and best-throughput charts; returns written paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    models = sorted({r.model for r in report.rows})

    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    for name in models:
        rows = [r for r in report.rows if r.model == name and not r.note]
        rows.sort(key=lambda r: r.batch_size)
        if not rows:
            continue
        ax.errorbar(
            [r.batch_size for r in rows],
            [r.mean_s for r in rows],
            yerr=[r.std_s for r in rows],
            marker="o", capsize=3, label=name,
        )
    ax.set_xscale("log", base=2)
    ax.set_yscale("log")
    ax.set_xlabel("batch size")
    ax.set_ylabel("seconds per dataset pass")
    ax.set_title(f"decode time ({report.n_tokens} tokens, {report.repeats} repeats)")
    ax.legend()
    fig.tight_layout()
    path = out / "bench_times.png"
    fig.savefig(path, dpi=150)
    plt.close(fig)
    written.append(str(path))

    best = [(name, report.best_row(name)) for name in models]
    best = [(n, r) for n, r in best if r is not None]
    if best:
        fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9.0, 4.0))
        names = [n for n, _ in best]
        ax1.bar(names, [r.tokens_per_s for _, r in best])
        ax1.set_ylabel("tokens / second (best batch size)")
        ax1.tick_params(axis="x", rotation=20)
        ax2.bar(names, [r.critical_path for _, r in best])
        ax2.set_ylabel("sequential critical-path steps")
        ax2.set_yscale("log")
        ax2.tick_params(axis="x", rotation=20)
        fig.tight_layout()
        path = out / "bench_summary.png"
        fig.savefig(path, dpi=150)
        plt.close(fig)
        written.append(str(path))
    return written
