"""Stylized facts of the two stochastic baselines."""
from cofindiff.baselines import GarchParams, GBMParams, gbm_log_returns, simulate_garch
from cofindiff.metrics import stylized_fact_report

runs = {
    "GBM(0, 1)": gbm_log_returns(GBMParams(0.0, 1.0), 300, 1500, seed=0),
    "GARCH(0.1, 0.1, 0.8)": simulate_garch(GarchParams(0.1, 0.1, 0.8), 300, seed=0, n_paths=1500),
}
for name, r in runs.items():
    rep = stylized_fact_report(r)
    lags = "  ".join(f"{lag}:{m:+.3f}" for lag, (m, _) in rep.acorr.items())
    print(f"{name:22s} kurtosis {rep.kurtosis_mean:+.3f}  Hill {rep.hill:.2f}  acorr {lags}")
    print(f"{'':22s} fat tail: {rep.verdict_fat_tail}  volatility clustering: {rep.verdict_vol_clustering}")
