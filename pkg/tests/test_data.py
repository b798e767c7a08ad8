import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from querydistill import data_pipeline as dp
from querydistill.errors import DuplicateId, InsufficientTranslations


def rec(i, text=None, language="en", source="web"):
    return dp.QueryRecord(
        id=f"q{i}", text=text if text is not None else f"query {i}",
        language=language, source=source,
    )


class TestRecords:
    def test_dict_round_trip(self):
        r = dp.QueryRecord("q1", "find it", "fr", "web", positive_doc_id="d9")
        assert dp.record_from_dict(r.to_dict()) == r

    def test_positive_doc_omitted_when_absent(self):
        assert "positive_doc_id" not in rec(0).to_dict()

    def test_jsonl_round_trip(self, tmp_path):
        records = [rec(0), rec(1, text="café naïve 日本"), rec(2, language="de")]
        path = tmp_path / "r.jsonl"
        dp.write_records(path, records)
        assert dp.read_records(path) == records

    def test_empty_file(self, tmp_path):
        path = tmp_path / "empty.jsonl"
        dp.write_records(path, [])
        assert path.read_text() == ""
        assert dp.read_records(path) == []


class TestDedup:
    def test_case_and_whitespace_insensitive(self):
        records = [
            rec(0, "Find The Report"),
            rec(1, "  find the report "),
            rec(2, "FIND THE REPORT"),
            rec(3, "something else"),
        ]
        kept, removed = dp.dedup_records(records)
        assert [r.id for r in kept] == ["q0", "q3"]
        assert removed == 2

    def test_keeps_first_occurrence(self):
        records = [rec(0, "dup"), rec(1, "dup"), rec(2, "dup")]
        kept, _ = dp.dedup_records(records)
        assert kept == [records[0]]

    def test_counts_add_up(self):
        uniques = [rec(i, f"text {i}") for i in range(726)]
        dups = [rec(1000 + i, f"text {i % 7}") for i in range(35)]
        kept, removed = dp.dedup_records(uniques + dups)
        assert len(kept) == 726 and removed == 35
        assert len(uniques) + len(dups) == 761

    @given(st.lists(st.sampled_from(["a", "b", "A ", " c", "d"]), max_size=30))
    @settings(max_examples=100)
    def test_idempotent(self, texts):
        records = [rec(i, t) for i, t in enumerate(texts)]
        once, _ = dp.dedup_records(records)
        twice, removed = dp.dedup_records(once)
        assert twice == once and removed == 0


class TestStratifiedSplit:
    def make_corpus(self):
        records = []
        i = 0
        for source, language, n in [
            ("web", "en", 40), ("web", "fr", 10), ("scan", "en", 50), ("scan", "de", 4)
        ]:
            for _ in range(n):
                records.append(rec(i, language=language, source=source))
                i += 1
        return records

    def test_deterministic(self):
        records = self.make_corpus()
        a = dp.stratified_split(records, 0.2, seed=9)
        b = dp.stratified_split(records, 0.2, seed=9)
        assert a == b

    def test_partition_preserves_order(self):
        records = self.make_corpus()
        train, val = dp.stratified_split(records, 0.25, seed=1)
        assert len(train) + len(val) == len(records)
        assert set(r.id for r in train) | set(r.id for r in val) == {r.id for r in records}
        assert not set(r.id for r in train) & set(r.id for r in val)
        positions = {r.id: i for i, r in enumerate(records)}
        assert [positions[r.id] for r in train] == sorted(positions[r.id] for r in train)
        assert [positions[r.id] for r in val] == sorted(positions[r.id] for r in val)

    def test_floor_per_stratum(self):
        records = self.make_corpus()
        _, val = dp.stratified_split(records, 0.25, seed=0)
        by_stratum = {}
        for r in val:
            by_stratum[(r.source, r.language)] = by_stratum.get((r.source, r.language), 0) + 1
        assert by_stratum[("web", "en")] == 10
        assert by_stratum[("web", "fr")] == 2
        assert by_stratum[("scan", "en")] == 12
        assert by_stratum[("scan", "de")] == 1

    def test_small_stratum_bump_threshold(self):
        # 50 records with floor(0.01 * 50) = 0 gets bumped to one val record;
        # 49 records does not
        big = [rec(i, source="s", language="en") for i in range(50)]
        _, val = dp.stratified_split(big, 0.01, seed=0)
        assert len(val) == 1
        small = [rec(i, source="s", language="en") for i in range(49)]
        _, val = dp.stratified_split(small, 0.01, seed=0)
        assert len(val) == 0

    def test_zero_fraction_all_train(self):
        records = self.make_corpus()
        train, val = dp.stratified_split(records, 0.0, seed=0)
        assert val == [] and len(train) == len(records)

    def test_invalid_fraction(self):
        with pytest.raises(ValueError):
            dp.stratified_split([], 1.0, seed=0)
        with pytest.raises(ValueError):
            dp.stratified_split([], -0.1, seed=0)


class TestMergePlan:
    FULL_COUNTS = {
        "en": 52_375,
        "es": 57_491,
        "de": 56_994,
        "fr": 54_079,
        "it": 53_787,
        "pt": 0,
    }

    def test_full_size_gaps(self):
        plan = dp.build_merge_plan(self.FULL_COUNTS)
        assert plan.gaps == {
            "de": 143_006,
            "es": 142_509,
            "fr": 145_921,
            "it": 146_213,
            "pt": 200_000,
        }
        assert plan.total_translated == 777_649
        assert plan.combined_total(711_603) == 1_489_252

    def test_thousandth_scale_gaps(self):
        counts = {"en": 52, "es": 57, "de": 57, "fr": 54, "it": 54, "pt": 0}
        plan = dp.build_merge_plan(counts, target_per_language=200)
        assert plan.gaps == {"de": 143, "es": 143, "fr": 146, "it": 146, "pt": 200}
        assert plan.gaps["it"] == 146
        assert plan.total_translated == 778
        assert plan.combined_total(712) == 1_490

    def test_pivot_excluded_even_when_short(self):
        plan = dp.build_merge_plan({"en": 3, "fr": 5}, target_per_language=10)
        assert "en" not in plan.gaps

    def test_surplus_clamps_to_zero(self):
        plan = dp.build_merge_plan({"en": 0, "fr": 15}, target_per_language=10)
        assert plan.gaps == {"fr": 0}

    def test_invalid_target(self):
        with pytest.raises(ValueError):
            dp.build_merge_plan({"en": 1}, target_per_language=0)


class TestSampling:
    def test_deterministic_and_sorted(self):
        pool = [rec(i) for i in range(30)]
        a = dp.sample_for_translation(pool, 8, seed=4)
        b = dp.sample_for_translation(pool, 8, seed=4)
        assert a == b and len(a) == 8
        order = [pool.index(r) for r in a]
        assert order == sorted(order)
        c = dp.sample_for_translation(pool, 8, seed=5)
        assert c != a

    def test_whole_pool(self):
        pool = [rec(i) for i in range(5)]
        assert dp.sample_for_translation(pool, 5, seed=0) == pool

    def test_insufficient_pool(self):
        with pytest.raises(InsufficientTranslations):
            dp.sample_for_translation([rec(0)], 2, seed=0)


class TestTranslation:
    def test_namespace_id(self):
        assert dp.namespace_id("fr", "q12") == "fr:q12"
        with pytest.raises(ValueError):
            dp.namespace_id("", "q12")

    def test_translate_records_rewrites_metadata(self):
        out = dp.translate_records([rec(3, "find x")], "it")
        assert out == [
            dp.QueryRecord("it:q3", "find x", "it", "web-translated")
        ]

    def test_translate_fn_hook(self):
        out = dp.translate_records([rec(0, "hello")], "de", lambda t, lang: f"{lang}:{t}")
        assert out[0].text == "de:hello"


class TestExecuteMerge:
    def make_inputs(self):
        base = [rec(i, language="en") for i in range(10)]
        pool = base[:]
        plan = dp.MergePlan(target_per_language=0, gaps={"fr": 3, "de": 2})
        return base, pool, plan

    def test_counts_and_determinism(self):
        base, pool, plan = self.make_inputs()
        merged = dp.execute_merge_plan(base, plan, pool, seed=7)
        assert dp.language_counts(merged) == {"de": 2, "en": 10, "fr": 3}
        assert merged == dp.execute_merge_plan(base, plan, pool, seed=7)
        assert merged[:10] == base

    def test_adding_language_keeps_others_stable(self):
        base, pool, _ = self.make_inputs()
        just_de = dp.execute_merge_plan(base, dp.MergePlan(0, {"de": 4}), pool, seed=7)
        both = dp.execute_merge_plan(base, dp.MergePlan(0, {"de": 4, "fr": 2}), pool, seed=7)
        de_ids = [r.id for r in just_de if r.language == "de"]
        assert [r.id for r in both if r.language == "de"] == de_ids

    def test_zero_gap_skipped(self):
        base, pool, _ = self.make_inputs()
        merged = dp.execute_merge_plan(base, dp.MergePlan(0, {"fr": 0}), pool, seed=1)
        assert merged == base

    def test_id_collision_detected(self):
        base = [rec(0, language="en"), dp.QueryRecord("fr:q1", "x", "fr", "web")]
        pool = [rec(1)]
        plan = dp.MergePlan(0, {"fr": 1})
        with pytest.raises(DuplicateId):
            dp.execute_merge_plan(base, plan, pool, seed=0)


class TestLanguageCounts:
    def test_sorted_counts(self):
        records = [rec(0, language="fr"), rec(1, language="en"), rec(2, language="fr")]
        assert dp.language_counts(records) == {"en": 1, "fr": 2}
        assert list(dp.language_counts(records)) == ["en", "fr"]
