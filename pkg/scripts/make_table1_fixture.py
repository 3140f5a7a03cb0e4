"""Regenerate the bundled reporting-delay fixture.

Claims occur between 2009-01-01 and 2015-12-31 on 200 policies in force
from 2009-01-01 to 2018-01-01.  Monthly lag counts for lags 0..9 and the
pooled 10+ bucket are fixed below; lags of 10+ claims are spread over
10..24 months.  Run from the repository root.
"""

import gzip
import io
from pathlib import Path

import numpy as np
import pandas as pd

LAG_COUNTS = [66475, 11617, 1580, 642, 342, 192, 141, 105, 80, 52, 130]
OUT = Path("src/ibnrcox/fixtures")


def main(seed: int = 20090101) -> None:
    rng = np.random.default_rng(seed)
    m = 200
    policies = pd.DataFrame(
        {
            "policy_id": [f"P{i:04d}" for i in range(m)],
            "start_date": "2009-01-01",
            "end_date": "2018-01-01",
            "region": rng.choice(["A", "B", "C"], size=m),
        }
    )
    lags = np.concatenate(
        [np.full(c, d) for d, c in enumerate(LAG_COUNTS[:-1])]
        + [rng.integers(10, 25, size=LAG_COUNTS[-1])]
    )
    n = lags.size
    first = np.datetime64("2009-01-01")
    occ = first + rng.integers(0, (np.datetime64("2016-01-01") - first).astype(np.int64), size=n)
    rep_month = occ.astype("datetime64[M]") + lags
    month_start = rep_month.astype("datetime64[D]")
    month_len = ((rep_month + 1).astype("datetime64[D]") - month_start).astype(np.int64)
    lo = np.where(lags == 0, (occ - month_start).astype(np.int64), 0)
    rep = month_start + lo + (rng.random(n) * (month_len - lo)).astype(np.int64)
    claims = pd.DataFrame(
        {
            "policy_id": policies["policy_id"].to_numpy()[rng.integers(0, m, size=n)],
            "occurrence_date": occ.astype(str),
            "report_date": rep.astype(str),
        }
    ).sort_values(["occurrence_date", "report_date", "policy_id"], kind="stable")
    OUT.mkdir(parents=True, exist_ok=True)
    policies.to_csv(OUT / "table1_policies.csv", index=False, lineterminator="\n")
    buf = io.StringIO()
    claims.to_csv(buf, index=False, lineterminator="\n")
    with open(OUT / "table1_claims.csv.gz", "wb") as raw:
        with gzip.GzipFile(fileobj=raw, mode="wb", mtime=0, filename="") as gz:
            gz.write(buf.getvalue().encode())


if __name__ == "__main__":
    main()
