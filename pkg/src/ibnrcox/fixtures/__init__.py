"""Bundled data files.

``table1_*`` is a portfolio whose claims occurring in 2009-2015 have the
monthly reporting-lag counts 66475, 11617, 1580, 642, 342, 192, 141, 105,
80, 52 for lags 0..9 and 130 beyond lag 9.
"""

from importlib.resources import files

TABLE1_VALUATION_DATE = "2018-01-01"
TABLE1_OCCURRENCE_PERIODS = 84  # 2009-01 .. 2015-12


def table1_paths():
    """``(policies_csv, claims_csv_gz)`` of the lag-distribution fixture."""
    base = files(__name__)
    return base / "table1_policies.csv", base / "table1_claims.csv.gz"


def load_table1(D: int = 9):
    from ..data import ingest

    policies, claims = table1_paths()
    return ingest(policies, claims, "monthly", TABLE1_VALUATION_DATE, D)
