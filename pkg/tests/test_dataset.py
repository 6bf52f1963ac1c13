"""Ingestion, splits and campaign slices."""

import gzip

import numpy as np
import pytest

from rtbconfig.dataset import (
    ALL_CAMPAIGNS,
    CampaignDataset,
    ImpressionRecord,
    load_log,
    make_campaign_slices,
    read_log,
    sample_rows,
    save_log,
    slice_report,
    split_train_test,
)
from rtbconfig.exceptions import DataError, InvalidArgument, SchemaError

HEADER = "timestamp,campaign,conversion,cost,cpo," + ",".join(f"cat{i}" for i in range(1, 10))


def _row(ts, campaign=7, conversion=0, cost=0.5, cpo="", cats=None):
    cats = cats if cats is not None else [ts % 5] * 9
    return ",".join([str(ts), str(campaign), str(conversion), str(cost), cpo] + [str(c) for c in cats])


def _write(path, rows, header=HEADER):
    path.write_text("\n".join([header] + rows) + "\n", encoding="utf-8")
    return path


def _campaigns(sizes):
    campaigns = np.concatenate([np.full(n, c) for c, n in sizes.items()])
    rows = len(campaigns)
    return CampaignDataset(
        timestamps=np.arange(rows),
        campaigns=campaigns,
        conversions=np.zeros(rows),
        clicks=np.zeros(rows),
        costs=np.ones(rows),
        cpos=np.full(rows, np.nan),
        attributes=np.zeros((rows, 9), dtype=np.int64),
    )


def test_three_rows_sorted_by_timestamp(tmp_path):
    path = _write(tmp_path / "log.csv", [_row(30), _row(10, conversion=1), _row(20)])
    d = load_log(path)
    assert len(d) == 3
    assert d.timestamps.tolist() == [10, 20, 30]
    assert d.conversions.tolist() == [1, 0, 0]
    assert d.campaign_id == 7
    assert d.cvr is None and d.profitability is None


def test_missing_column_names_it(tmp_path):
    header = HEADER.replace(",cat7", "")
    path = _write(tmp_path / "log.csv", [_row(1)[:-2]], header=header)
    with pytest.raises(SchemaError) as err:
        load_log(path)
    assert err.value.column == "cat7"
    assert "cat7" in str(err.value)


def test_missing_last_attribute_names_it(tmp_path):
    header = HEADER.replace(",cat9", "")
    path = _write(tmp_path / "log.csv", [_row(1)[:-2]], header=header)
    with pytest.raises(SchemaError) as err:
        load_log(path)
    assert err.value.column == "cat9"


def test_attribute_count_pinned_or_inferred(tmp_path):
    path = tmp_path / "short.csv"
    path.write_text("timestamp,campaign,conversion,cost,cat1,cat2,cat3\n5,1,0,0.5,7,8,9\n", encoding="utf-8")
    assert load_log(path, n_attributes=3).attributes.tolist() == [[7, 8, 9]]
    assert load_log(path, n_attributes=None).n_attributes == 3
    with pytest.raises(SchemaError) as err:
        load_log(path)
    assert err.value.column == "cat4"


def test_whole_number_columns_skip_floats(tmp_path):
    big = 2 ** 53 + 1
    rows = [_row(1, cats=[big, big - 1] + [0] * 7), _row(2, conversion="1.0"), _row(3, cats=["1.5"] + [0] * 8)]
    result = read_log(_write(tmp_path / "log.csv", rows), error_tolerance=0.5)
    d = result.dataset
    assert d.attributes[0, :2].tolist() == [big, big - 1]
    assert d.conversions.tolist() == [0, 1]
    assert result.rejected[0].column == "cat1"
    back = load_log(save_log(d, tmp_path / "again.csv"))
    assert back.attributes[0, 0] == big


def test_schema_mapping(tmp_path):
    header = HEADER.replace("timestamp", "time")
    path = _write(tmp_path / "log.csv", [_row(2), _row(1)], header=header)
    d = load_log(path, {"timestamp": "time"})
    assert d.timestamps.tolist() == [1, 2]


def test_bad_cells_are_collected_below_tolerance(tmp_path):
    rows = [_row(i) for i in range(200)]
    rows[5] = rows[5].replace(",0.5,", ",abc,", 1)
    path = _write(tmp_path / "log.csv", rows)
    result = read_log(path)
    assert len(result.dataset) == 199
    assert result.rows_rejected == 1
    assert result.rejected[0].line == 7
    assert result.rejected[0].column == "cost"


def test_bad_cells_above_tolerance_abort(tmp_path):
    rows = [_row(i) for i in range(50)]
    rows[3] = rows[3].replace(",0.5,", ",nope,", 1)
    path = _write(tmp_path / "log.csv", rows)
    with pytest.raises(DataError) as err:
        read_log(path)
    assert err.value.errors[0].line == 5


def test_missing_categorical_rejects_row_without_aborting(tmp_path):
    rows = [_row(i) for i in range(10)]
    rows[2] = _row(2, cats=[""] + [1] * 8)
    path = _write(tmp_path / "log.csv", rows)
    result = read_log(path)
    assert len(result.dataset) == 9
    assert result.rejected[0].column == "cat1"


def test_non_binary_label_is_rejected(tmp_path):
    rows = [_row(i) for i in range(200)]
    rows[0] = _row(0, conversion=2)
    result = read_log(_write(tmp_path / "log.csv", rows))
    assert len(result.dataset) == 199
    assert result.rejected[0].column == "conversion"


def test_tab_delimited_and_gzip(tmp_path):
    text = "\n".join([HEADER.replace(",", "\t")] + [_row(i).replace(",", "\t") for i in range(4)]) + "\n"
    path = tmp_path / "log.tsv.gz"
    with gzip.open(path, "wt", encoding="utf-8") as handle:
        handle.write(text)
    d = load_log(path)
    assert len(d) == 4
    assert d.attributes[3].tolist() == [3] * 9


def test_save_and_load_keep_scores(tmp_path):
    d = CampaignDataset.from_arrays(
        [[1] * 9, [2] * 9],
        [0.5, 0.0],
        cvr=[0.25, 0.5],
        profitability=[0.5, np.nan],
        campaign_id=3,
    )
    path = save_log(d, tmp_path / "scored.csv")
    back = load_log(path)
    assert back.cvr.tolist() == [0.25, 0.5]
    assert back.profitability[0] == 0.5
    assert np.isnan(back.profitability[1])
    assert back.campaign_id == 3


def test_multiple_campaigns_use_sentinel():
    assert _campaigns({1: 2, 2: 3}).campaign_id == ALL_CAMPAIGNS


def test_split_train_test():
    d = _campaigns({0: 10})
    train, test = split_train_test(d, 6)
    assert (len(train), len(test)) == (6, 4)
    assert test.timestamps[0] == 6
    with pytest.raises(InvalidArgument):
        split_train_test(d, 0)
    with pytest.raises(InvalidArgument):
        split_train_test(d, 10)


def test_slices_per_campaign():
    d = _campaigns({1: 250, 2: 120, 3: 80})
    report = slice_report(d, 100)
    assert report.emitted == [(1, 2), (2, 1)]
    assert report.skipped == 1
    slices = make_campaign_slices(d, 100)
    assert [s.name for s in slices] == ["1-1", "1-2", "2-1"]
    assert all(len(s) == 100 for s in slices)
    assert slices[1].campaign_id == 1
    assert slices[1].timestamps[0] == 100


def test_slices_of_empty_dataset():
    assert make_campaign_slices(_campaigns({0: 0}), 100) == []
    with pytest.raises(InvalidArgument):
        slice_report(_campaigns({0: 5}), 0)


def test_record_access_and_validation():
    d = CampaignDataset.from_arrays([[4] * 9], [2.0], conversions=[1], cvr=[0.5])
    record = d[0]
    assert record.conversion == 1
    assert record.attributes == (4,) * 9
    assert record.cvr == 0.5
    assert record.cpo is None
    with pytest.raises(InvalidArgument):
        ImpressionRecord(0, 0, 2, 1.0, (1,) * 9)
    with pytest.raises(InvalidArgument):
        CampaignDataset.from_arrays([[1] * 9, [1] * 9], [1.0, 1.0], timestamps=[5, 4])


def test_take_keeps_columns_read_only():
    d = _campaigns({0: 20})
    picked = d.take(np.array([9, 3, 5]))
    assert picked.timestamps.tolist() == [3, 5, 9]
    assert not picked.costs.flags.writeable


def test_sample_rows_is_seeded_and_time_ordered():
    d = _campaigns({0: 100})
    first = sample_rows(d, 10, seed=1)
    assert first.timestamps.tolist() == sample_rows(d, 10, seed=1).timestamps.tolist()
    assert np.all(np.diff(first.timestamps) > 0)
