import aipw_gmm

# One scenario: strong endogeneity, correctly specified nuisances.
reports = aipw_gmm.simulate(n=1000, replications=100, gamma=0.8, seed=7, threads=4)

# All blocks of a preset; fields given here override every block.
reports += aipw_gmm.simulate('table2', replications=100, seed=7)

for report in reports:
    print(report.scenario.gamma, report.scenario.misspec)
    for kind, summary in report.summaries.items():
        print(f"  {kind.value:<5} alpha={summary.mean_estimate[0]:.4f} "
              f"bias={summary.mean_bias[0]:.4f} rmse={summary.rmse[0]:.4f}")
