"""
From imbalance to a daily PnL and its report
============================================

The daily PnL trades the sign of each bucket's imbalance into the next
bucket's return.  The series is volatility-targeted and summarised by the
ten-metric report; roles are voted from OFI/return correlations.
"""

import numpy as np

from mboflow.strategy import assign_roles, daily_pnl, metrics, sharpe, vol_target, vote_roles

rng = np.random.default_rng(0)

# a toy stock: 12 buckets a day, imbalance that leans toward the next return
days = []
for _ in range(250):
    ret = rng.normal(0, 0.002, 12)
    ofi = np.where(rng.random(12) < 0.56, np.sign(ret), -np.sign(ret)) * rng.integers(1, 50, 12)
    days.append(daily_pnl(ofi, ret))
pnl = np.array(days)
print(f"raw daily PnL: mean {pnl.mean():.2e}, Sharpe {sharpe(pnl):.2f}")

# scaling to 15% annualised volatility leaves the Sharpe ratio alone
scaled = vol_target(pnl)
print(f"after targeting: annualised vol {scaled.std(ddof=1) * np.sqrt(252):.4f}, Sharpe {sharpe(scaled):.2f}")

for key, value in metrics(scaled).to_dict().items():
    print(f"  {key:26s} {value: .4f}")

# role votes from two stocks' correlation scores, then the consensus
votes = {
    "AAA": vote_roles(conr_scores=[0.8, 0.1, 0.2], freb_scores=[0.3, 0.4, 0.1]),
    "BBB": vote_roles(conr_scores=[0.7, 0.3, 0.1], freb_scores=[0.2, 0.1, 0.5]),
}
print("\nper-stock votes:", votes)
roles = assign_roles(votes)
print("consensus roles:", roles.roles, "tie broken:", roles.tie_broken)
