"""Fairness-region shares of the PF and MT baselines across environment seeds."""
import sys

from scar.scheduler import EnvConfig, SchedulerEnv, run_baseline


def main(ttis=2000, seeds=3):
    for seed in range(100, 100 + seeds):
        for mode in ("PF", "MT"):
            shares, infos = run_baseline(SchedulerEnv(EnvConfig(seed=seed), None, "raw"), mode, ttis)
            cell = sum(i.cell_throughput for i in infos) / len(infos)
            print(f"seed {seed} {mode}: UF {shares['UF']:5.1f}%  FA {shares['FA']:5.1f}%  "
                  f"OF {shares['OF']:5.1f}%  cell throughput {cell:.2f}")


if __name__ == "__main__":
    main(*(int(a) for a in sys.argv[1:]))
