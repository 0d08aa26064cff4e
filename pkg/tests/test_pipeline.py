import datetime as dt
import io

import numpy as np
import pytest

from gestalt.core import Cohort, Measurement, Source
from gestalt.errors import ImbalanceWarning, LoadError, ReweightError
from gestalt.pipeline import (
    dedup_first_exam,
    load_cohort,
    reweight_split,
    round_half_away,
    select_eligible,
    trim_outliers,
    write_cohort,
)

from conftest import quadratic_cohort

HEADER = "pregnancy_id,exam_date,fa_days,crl_mm,source\n"


def write(tmp_path, text, name="c.csv"):
    p = tmp_path / name
    p.write_text(text)
    return p


def m(pid, day, crl, fa=50.0, **kw):
    return Measurement(pid, dt.date(2020, 1, day), fa, crl, **kw)


# --------------------------------------------------------------------------
# CSV
# --------------------------------------------------------------------------


def test_load_minimal(tmp_path):
    p = write(tmp_path, HEADER + "a,2020-01-02,50,20.5,IVF\nb,2020-01-03,60,30,spontaneous\n")
    c = load_cohort(p)
    assert c.ids == ["a", "b"]
    assert c[0].source is Source.IVF and c[1].source is Source.SPONTANEOUS
    np.testing.assert_array_equal(c.weights, [1.0, 1.0])


def test_round_trip(tmp_path, rng):
    c = quadratic_cohort(rng, n=30).with_weights(rng.uniform(0.5, 2, 30))
    c = Cohort(tuple(Measurement(x.pregnancy_id, dt.date(2021, 5, 1), x.fa_days, x.crl_mm, x.weight,
                                 Source.IVF, (("regular_cycle", i % 2 == 0),)) for i, x in enumerate(c)))
    p = tmp_path / "out.csv"
    write_cohort(c, p)
    back = load_cohort(p)
    assert back.measurements == c.measurements


@pytest.mark.parametrize("text, match", [
    ("pregnancy_id,exam_date,fa_days,source\n", "crl_mm"),
    ("pregnancy_id,exam_date,fa_days,crl_mm,source,crl_mm\n", "duplicate"),
    (HEADER + "a,2020-01-02,50,-1,IVF\n", "line 2"),
    (HEADER + "a,2020-01-02,50,abc,IVF\n", "line 2"),
    (HEADER + "a,2020-01-02,50,10,IVF\nb,2020-01-02,50,10,OTHER\n", "line 3"),
    (HEADER + "a,2020-01-02,50\n", "line 2"),
    ("", "header"),
])
def test_load_errors(tmp_path, text, match):
    with pytest.raises(LoadError, match=match):
        load_cohort(write(tmp_path, text))


def test_non_strict_skips_bad_rows(tmp_path):
    p = write(tmp_path, HEADER + "a,2020-01-02,50,-1,IVF\nb,2020-01-02,50,10,IVF\n")
    with pytest.warns(UserWarning, match="line 2"):
        c = load_cohort(p, strict=False)
    assert c.ids == ["b"]


def test_empty_cohort_warns(tmp_path):
    with pytest.warns(UserWarning, match="empty"):
        c = load_cohort(write(tmp_path, HEADER))
    assert len(c) == 0


def test_write_to_handle(rng):
    buf = io.StringIO()
    write_cohort(quadratic_cohort(rng, n=3), buf)
    assert buf.getvalue().splitlines()[0] == "pregnancy_id,exam_date,fa_days,crl_mm,source,weight"


# --------------------------------------------------------------------------
# Stages
# --------------------------------------------------------------------------


def test_dedup_keeps_earliest_exam():
    c = Cohort((m("a", 5, 20.0), m("b", 3, 10.0), m("a", 2, 15.0), m("a", 9, 5.0)))
    d = dedup_first_exam(c)
    assert [(x.pregnancy_id, x.crl_mm) for x in d] == [("b", 10.0), ("a", 15.0)]


def test_dedup_tie_breaks_by_crl_then_order():
    c = Cohort((m("a", 2, 20.0), m("a", 2, 12.0), m("a", 2, 12.0, fa=51.0)))
    d = dedup_first_exam(c)
    assert len(d) == 1 and d[0].crl_mm == 12.0 and d[0].fa_days == 50.0


def test_dedup_is_idempotent():
    c = Cohort((m("a", 5, 20.0), m("a", 2, 15.0), m("b", 1, 3.0)))
    once = dedup_first_exam(c)
    assert dedup_first_exam(once).measurements == once.measurements


def test_select_threshold_is_strict():
    c = Cohort((m("a", 1, 84.9), m("b", 1, 85.0), m("c", 1, 90.0)))
    assert select_eligible(c).ids == ["a"]


def test_select_is_idempotent(rng):
    c = quadratic_cohort(rng, n=80)
    once = select_eligible(c)
    assert select_eligible(once).measurements == once.measurements


def test_select_flags():
    c = Cohort((m("a", 1, 10.0, flags=(("regular_cycle", True),)),
                m("b", 1, 10.0, flags=(("regular_cycle", False),)),
                m("c", 1, 10.0)))
    assert select_eligible(c, require_flags=["regular_cycle"]).ids == ["a", "c"]


@pytest.mark.parametrize("v, expected", [(2.5, 3), (-2.5, -3), (25.2, 25), (21.84, 22), (0.5, 1), (0.49, 0)])
def test_round_half_away(v, expected):
    assert round_half_away(v) == expected


def test_trim_counts_for_560(rng):
    rep = trim_outliers(quadratic_cohort(rng, n=560))
    assert (rep.removed_low, rep.removed_high) == (25, 22)
    assert len(rep.kept) == 560 - 47
    assert rep.total_removed_fraction == pytest.approx(47 / 560)


def test_trim_removes_the_extremes(rng):
    c = quadratic_cohort(rng, n=100)
    crl = np.array(c.crl)
    crl[7] += 30.0
    crl[11] = max(crl[11] - 15.0, 0.1)
    c = Cohort.from_arrays(c.fa, crl)
    rep = trim_outliers(c, lower_frac=0.01, upper_frac=0.01)
    assert rep.removed_high_ids == ("p00008",)
    assert rep.removed_low_ids == ("p00012",)
    assert "p00008" not in rep.kept.ids


def test_trim_report_json(rng):
    rep = trim_outliers(quadratic_cohort(rng, n=40))
    doc = rep.to_dict()
    assert doc["removed_low"]["count"] == 2 and doc["removed_high"]["count"] == 2
    assert len(doc["kept_ids"]) == 36


def test_trim_fraction_validation(rng):
    with pytest.raises(ValueError):
        trim_outliers(quadratic_cohort(rng, n=40), lower_frac=0.3, upper_frac=0.3)


def test_reweight_balances_groups():
    crl = np.array([10.0, 20.0, 30.0, 50.0, 60.0, 70.0, 80.0, 40.0])
    c = reweight_split(Cohort.from_arrays(np.full(8, 50.0), crl))
    w = c.weights
    below = crl < 45
    assert w[below].sum() == pytest.approx(4.0, abs=1e-12)
    assert w[~below].sum() == pytest.approx(4.0, abs=1e-12)
    assert w.sum() == pytest.approx(8.0, abs=1e-12)
    np.testing.assert_allclose(w[below], 8 / (2 * 4))


def test_reweight_one_sided():
    with pytest.raises(ReweightError):
        reweight_split(Cohort.from_arrays([50.0, 51.0], [10.0, 12.0]))


def test_reweight_imbalance_warning():
    crl = np.r_[np.full(30, 60.0), 10.0]
    with pytest.warns(ImbalanceWarning):
        reweight_split(Cohort.from_arrays(np.full(31, 50.0), crl))


def test_stages_do_not_mutate_input(rng):
    c = quadratic_cohort(rng, n=60)
    before = c.measurements
    reweight_split(trim_outliers(select_eligible(c)).kept)
    assert c.measurements == before
