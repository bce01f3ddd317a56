import io

import numpy as np
import pytest

from rul_forge.cmapss_io import (
    DataError,
    check_against_meta,
    format_rul,
    format_trajectories,
    load_subset,
    parse_rul_file,
    parse_trajectory_file,
    subset_meta,
)


def row(unit, cycle, fill=0.5, n=24):
    return " ".join([str(unit), str(cycle)] + [str(fill)] * n)


class TestParseTrajectories:
    def test_minimal(self):
        text = "\n".join([row(1, 1), row(1, 2), row(1, 3), row(2, 1), row(2, 2)]) + "\n"
        units = parse_trajectory_file(text)
        assert [u.unit_id for u in units] == [1, 2]
        assert [len(u) for u in units] == [3, 2]
        assert units[0].settings.shape == (3, 3) and units[0].sensors.shape == (3, 21)

    def test_trailing_whitespace_and_blank_lines(self):
        text = row(1, 1) + "  \n\n" + row(1, 2) + " \n"
        assert len(parse_trajectory_file(io.StringIO(text))[0]) == 2

    def test_wrong_column_count_names_line(self):
        text = row(1, 1) + "\n" + row(1, 2, n=23) + "\n"
        with pytest.raises(DataError, match="line 2.*26.*25"):
            parse_trajectory_file(text)

    def test_non_numeric(self):
        with pytest.raises(DataError, match="line 1"):
            parse_trajectory_file(row(1, 1).replace("0.5", "abc", 1))

    def test_cycle_gap_names_unit(self):
        text = "\n".join([row(3, 1), row(3, 2), row(3, 4)])
        with pytest.raises(DataError, match="unit 3.*cycle 4"):
            parse_trajectory_file(text)

    def test_values_preserved(self):
        cells = ["7", "1"] + [repr(0.1 * i) for i in range(24)]
        u = parse_trajectory_file(" ".join(cells))[0]
        np.testing.assert_array_equal(u.settings[0], [0.0, 0.1, 0.2])
        assert u.sensors[0, -1] == 0.1 * 23


class TestParseRul:
    def test_values(self):
        assert parse_rul_file("112\n98\n69\n", 3) == [112, 98, 69]

    def test_count_mismatch(self):
        with pytest.raises(DataError):
            parse_rul_file("1\n2\n", 3)

    @pytest.mark.parametrize("bad", ["-1\n", "2.5\n", "x\n"])
    def test_invalid(self, bad):
        with pytest.raises(DataError):
            parse_rul_file(bad, 1)


class TestMeta:
    @pytest.mark.parametrize(
        "subset,train,test,rows,conditions,faults",
        [
            ("FD001", 100, 100, 17731, 1, 1),
            ("FD002", 260, 259, 48558, 6, 1),
            ("FD003", 100, 100, 21120, 1, 2),
            ("FD004", 249, 248, 56815, 6, 2),
        ],
    )
    def test_reference_counts(self, subset, train, test, rows, conditions, faults):
        m = subset_meta(subset)
        assert (m.train_engines, m.test_engines, m.train_rows, m.operating_conditions, m.fault_modes) == (
            train, test, rows, conditions, faults,
        )  # fmt: skip

    def test_cycle_ranges(self):
        assert (subset_meta("FD001").train_max_cycle, subset_meta("FD001").train_min_cycle) == (362, 128)
        assert (subset_meta("FD004").test_max_cycle, subset_meta("FD004").test_min_cycle) == (486, 19)

    def test_unknown(self):
        with pytest.raises(KeyError):
            subset_meta("FD009")

    def test_mismatch_warns(self, small_fleet):
        with pytest.warns(UserWarning):
            issues = check_against_meta("FD001", small_fleet.train, small_fleet.test)
        assert len(issues) == 2


class TestRoundTrip:
    def test_format_parse(self, small_fleet):
        back = parse_trajectory_file(format_trajectories(small_fleet.train))
        for a, b in zip(small_fleet.train, back):
            assert a.unit_id == b.unit_id
            assert a.sensors.tobytes() == b.sensors.tobytes() and a.settings.tobytes() == b.settings.tobytes()
        assert parse_rul_file(format_rul(small_fleet.offsets), len(small_fleet.offsets)) == small_fleet.offsets

    def test_load_subset(self, small_fleet, tmp_path):
        small_fleet.write(tmp_path, "FD001")
        train, test, offsets = load_subset(tmp_path, "FD001")
        assert len(train) == 8 and len(test) == 6 and offsets == small_fleet.offsets

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError, match="train_FD001"):
            load_subset(tmp_path, "FD001")


def test_real_fd001(cmapss_dir):
    train, test, offsets = load_subset(cmapss_dir, "FD001")
    meta = subset_meta("FD001")
    assert len(train) == meta.train_engines and len(test) == meta.test_engines
    assert sum(len(t) for t in train) == meta.train_rows
    assert max(len(t) for t in train) == meta.train_max_cycle
