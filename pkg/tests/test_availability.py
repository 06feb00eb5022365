import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fedsim.availability import (
    AlwaysOn,
    Alternating,
    Custom,
    Diurnal,
    NeverAvailable,
    SleepWindow,
    absence_gaps,
    available_set,
    diurnal_from_labels,
    load_custom_schedule,
    minimal_E,
    round_availability,
    validate_min_availability,
    write_custom_schedule,
)
from fedsim.core import derive_stream


def brute_force_ok(schedule, E, horizon):
    # every window of E consecutive indices must contain every client
    for start in range(1, horizon - E + 2):
        seen = set()
        for t in range(start, start + E):
            seen |= schedule.available(t)
        if seen != set(range(1, schedule.num_clients + 1)):
            return False
    return True


class TestMembership:
    def test_alternating_pattern(self):
        s = Alternating(2, 1, {1}, {2})
        assert [set(s.available(t)) for t in (1, 2, 3, 4)] == [{1}, {1}, {2}, {1}]

    def test_always_on(self):
        s = AlwaysOn(5)
        for t in (1, 17, 10**6):
            assert available_set(s, t) == {1, 2, 3, 4, 5}

    def test_diurnal_blocks(self):
        s = Diurnal(2, {1, 2}, {3})
        assert [set(s.available(r)) for r in (1, 2, 3, 4, 5)] == [{1, 2}, {1, 2}, {3}, {3}, {1, 2}]

    def test_diurnal_from_labels(self):
        s = diurnal_from_labels(3, [0, 1, 2, 0, 1, 2], D=1)
        assert s.group_a == {1, 4} and s.group_b == {2, 3, 5, 6}

    def test_sleep_window_third_of_day(self):
        s = SleepWindow(24, (0, 20))
        day = [s.available(t) for t in range(1, 25)]
        assert sum(1 in a for a in day) == 8
        # client 2 wraps past midnight: slots 20..23 and 0..3
        assert [t for t in range(1, 25) if 2 in day[t - 1]] == [1, 2, 3, 4, 21, 22, 23, 24]

    def test_sleep_window_random_is_seeded(self):
        a = SleepWindow.random(30, 24, derive_stream(5, "windows"))
        b = SleepWindow.random(30, 24, derive_stream(5, "windows"))
        assert a == b

    def test_alternating_rejects_overlap(self):
        with pytest.raises(ValueError):
            Alternating(1, 1, {1, 2}, {2})

    def test_custom_beyond_horizon(self):
        s = Custom(np.ones((3, 2), dtype=bool))
        with pytest.raises(IndexError):
            s.available(4)

    def test_round_availability_intersects(self):
        s = Alternating(2, 1, {1}, {2})
        assert round_availability(s, 1, 2) == {1}
        # iterations 3 and 4 have disjoint groups
        assert round_availability(s, 2, 2) == frozenset()


class TestValidation:
    def test_alternating(self):
        s = Alternating(2, 1, {1}, {2})
        assert validate_min_availability(s, 3, 30) == []
        assert validate_min_availability(s, 2, 30) == [(2, 1)]

    def test_always_on(self):
        assert validate_min_availability(AlwaysOn(4), 1, 10) == []

    @pytest.mark.parametrize("block_len", [1, 3, 10])
    def test_diurnal(self, block_len):
        s = Diurnal(block_len, {1}, {2, 3})
        assert validate_min_availability(s, block_len, 10 * block_len) != []
        assert validate_min_availability(s, block_len + 1, 10 * block_len) == []
        assert s.declared_E == minimal_E(s, 10 * block_len)

    @settings(max_examples=100, deadline=None)
    @given(
        st.integers(1, 5).flatmap(
            lambda n: st.lists(st.lists(st.booleans(), min_size=n, max_size=n), min_size=6, max_size=40)
        ),
        st.integers(1, 6),
    )
    def test_matches_window_enumeration(self, rows, E):
        bm = np.array(rows, dtype=bool)
        bm[0] = True  # keep minimal_E defined
        s = Custom(bm)
        horizon = bm.shape[0]
        if E > horizon:
            return
        assert (validate_min_availability(s, E, horizon) == []) == brute_force_ok(s, E, horizon)


class TestMinimalE:
    def test_alternating(self):
        assert minimal_E(Alternating(3, 1, {1}, {2}), 40) == 4

    def test_always_on(self):
        assert minimal_E(AlwaysOn(3), 10) == 1

    def test_sleep_window(self):
        s = SleepWindow(24, (0, 5, 13))
        assert absence_gaps(s, 96) == {1: 16, 2: 16, 3: 16}
        assert minimal_E(s, 96) == 17 == s.declared_E

    def test_never_available(self):
        bm = np.zeros((5, 2), dtype=bool)
        bm[:, 0] = True
        with pytest.raises(NeverAvailable):
            minimal_E(Custom(bm, declared_E=1), 5)


class TestCustomFile:
    def test_round_trip(self, tmp_path):
        bm = derive_stream(1, "test").random((7, 4)) < 0.5
        bm[0] = True
        path = tmp_path / "sched.txt"
        write_custom_schedule(bm, path)
        assert path.read_text().splitlines()[0] == "4 7"
        loaded = load_custom_schedule(path)
        np.testing.assert_array_equal(loaded.bitmap, bm)

    def test_header_row_count_mismatch(self, tmp_path):
        path = tmp_path / "bad.txt"
        path.write_text("2 3\n11\n01\n")
        with pytest.raises(ValueError):
            load_custom_schedule(path)

    def test_bad_character(self, tmp_path):
        path = tmp_path / "bad.txt"
        path.write_text("2 1\n1x\n")
        with pytest.raises(ValueError):
            load_custom_schedule(path)
