"""Where the parameters of a Swin-T-sized model live.

Counts come straight from the parameter layout, so nothing is allocated.
The printout shows the shared/task split, the per-task prompt budget, and
how the total grows as identical tasks are added, next to two stylised
alternatives (one decoder per task with pairwise interaction modules, and
a prompt-free task-conditional model with per-task adapters).

    python demos/01_parameter_budget.py
"""

from pgt.accounting import FAMILIES, growth_curves, partition
from pgt.model import param_layout, swin_t_config


def main():
    cfg = swin_t_config()
    report = partition(param_layout(cfg))
    print(f"total parameters     {report.total:>12,}")
    print(f"shared               {report.shared:>12,}")
    print(f"  of which decoder   {report.decoder_shared:>12,}  (decoder + heads = {report.decoder_fraction:.2f}% of total)")
    print(f"  positional table   {report.positional:>12,}")
    for task, n in report.per_task.items():
        print(f"task {task:<10} {n:>12,}  prompts {report.prompt_params_per_task[task]:,}"
              f"  head {report.head_params_per_task[task]:,}")

    print("\ntasks  " + "  ".join(f"{f:>24}" for f in FAMILIES))
    curves = {f: dict(growth_curves(f, cfg, range(1, 7))) for f in FAMILIES}
    for n in range(1, 7):
        print(f"{n:>5}  " + "  ".join(f"{curves[f][n]:>24,}" for f in FAMILIES))
    pgt = curves["pgt"]
    step = pgt[2] - pgt[1]
    print(f"\neach extra task adds {step:,} parameters ({step / pgt[4]:.3%} of the 4-task model)")


if __name__ == "__main__":
    main()
