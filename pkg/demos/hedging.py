"""Learn to hedge a call on GBM paths and compare with the delta hedge."""
from cofindiff.hedging import (HedgeControl, delta_policy, erm, gbm_episodes, simulate_hedge, train_hedger, var_cvar,
                               zero_policy)

train_set, val_set, test_set = gbm_episodes(2000, seed=1), gbm_episodes(500, seed=2), gbm_episodes(5000, seed=3)
state = train_hedger(train_set, val_set, ctl=HedgeControl(lr=1e-3, max_epochs=10, batch_size=500))
print(f"trained {state.epoch} epochs, best validation ERM {state.best_val:.5f}")

print(f"{'policy':10s} {'ERM':>9s} {'VaR':>9s} {'CVaR':>9s} {'mean cost':>10s}")
for name, policy in (("learned", state.policy), ("delta", delta_policy), ("none", zero_policy)):
    ep = simulate_hedge(policy, test_set.paths, cost_rate=1e-4, vol_feature=test_set.vol_feature)
    var, cvar = var_cvar(ep.pnl)
    print(f"{name:10s} {erm(ep.pnl):9.5f} {var:9.5f} {cvar:9.5f} {ep.cost.mean():10.6f}")
