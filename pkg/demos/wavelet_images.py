"""A trading day as a wavelet image, and back."""
import numpy as np

from cofindiff.market_data import toy_garch_corpus
from cofindiff.wavelet import decode, encode

day = toy_garch_corpus(1, seed=3)[0]
img = encode(day.scaled_returns)
print(f"{day.ticker} {day.date}: {len(day.scaled_returns)} returns -> image {img.values.shape}")

# details from fine to coarse, then the overall mean; coarse levels are repeated down the column
for level, repeat, length in img.layout.columns:
    head = np.round(img.values[:4, level], 3)
    print(f"  column {level:2d}: {length:3d} coefficients x{repeat:<3d} first rows {head}")

back = decode(img.values, img.layout)
print("max round-trip error:", np.abs(back - day.scaled_returns).max())
