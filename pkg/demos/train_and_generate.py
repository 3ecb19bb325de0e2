"""Train a small conditional model on the toy corpus and ask it for specific days.

Takes a few minutes on a laptop CPU. The model is far too small to be good;
the point is the workflow.
"""
import logging

from cofindiff.diffusion import DenoiserConfig, TrainControl, as_generator, make_schedule, train
from cofindiff.market_data import build_dataset, toy_garch_corpus
from cofindiff.metrics import ConditionGrid, condition_mae

logging.basicConfig(level=logging.INFO, format="%(message)s")

days = toy_garch_corpus(400, seed=0)
split = build_dataset(days, None, {"train": ("2015-01-01", "2015-12-31"), "val": ("2016-01-01", "2016-03-31"),
                                   "test": ("2016-04-01", "2099-12-31")})
print(f"{len(split.train)} training days ({sum(split.multiplicities)} after upsampling), {len(split.val)} val")

net = DenoiserConfig(base_channels=16, channel_mult=(1, 2), res_blocks=1)
state = train(split, make_schedule(200), net, TrainControl(lr=1e-3, lr_min=1e-4, max_epochs=8, steps_per_epoch=20))

grid = ConditionGrid(trends=(-8.0, 0.0, 8.0), rvs=(20.0, 60.0))
res = condition_mae(as_generator(state.model), grid, per_point=2)
print(f"trend MAE {res.trend_mae:.2f} (always-zero baseline {res.baseline()[0]:.2f})")
print(f"rv MAE    {res.rv_mae:.2f} (always-zero baseline {res.baseline()[1]:.2f})")
for req_m, req_v, m, v in res.scatter:
    print(f"  asked ({req_m:+5.1f}, {req_v:5.1f})  got ({m:+6.2f}, {v:6.2f})")
