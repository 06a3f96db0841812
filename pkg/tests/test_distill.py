import pytest
from hypothesis import given, strategies as st

from vqcmp.clients import CapabilityError, ResponseCache
from vqcmp.corpus import ItemKind, Provenance
from vqcmp.distill import (
    DEFAULT_ASPECTS,
    DistillError,
    DistillStats,
    QAItem,
    generate_qa,
    generate_qa_batch,
    merge_compare,
    merge_compare_batch,
    ordinal_word,
    parse_qa_records,
    qa_to_mcq,
    render_merge_prompt,
    render_qa_prompt,
    render_teach_general_prompt,
    teach_general,
)

from conftest import ScriptedClient, make_group

ABCD = {"img00000": "A", "img00001": "B", "img00002": "C", "img00003": "D"}


class TestTemplates:
    def test_pair_merge_prompt_matches_golden(self, goldens):
        assert render_merge_prompt(make_group(2), ABCD) == goldens["merge_prompt_pair"]

    def test_triple_merge_prompt_matches_golden(self, goldens):
        assert render_merge_prompt(make_group(3), ABCD) == goldens["merge_prompt_triple"]

    def test_quad_merge_prompt_matches_golden(self, goldens):
        assert render_merge_prompt(make_group(4), ABCD) == goldens["merge_prompt_quad"]

    @pytest.mark.parametrize(
        "size,key",
        [(2, "teach_prompt_pair"), (3, "teach_prompt_triple"), (4, "teach_prompt_quad")],
    )
    def test_teach_prompts_match_golden(self, goldens, size, key):
        turn = render_teach_general_prompt(make_group(size))
        assert turn.text == goldens[key]
        assert len(turn.images) == size

    def test_ordinals_total_on_0_to_3_and_error_beyond(self):
        assert [ordinal_word(i) for i in range(4)] == ["first", "second", "third", "fourth"]
        with pytest.raises(DistillError):
            ordinal_word(4)
        with pytest.raises(DistillError):
            ordinal_word(-1)

    def test_missing_description_rejected(self):
        with pytest.raises(DistillError, match="img00001"):
            render_merge_prompt(make_group(2), {"img00000": "A"})


class TestMergeCompare:
    def test_stub_passthrough(self):
        client = ScriptedClient(reply="X")
        item = merge_compare(client, make_group(2), ABCD)
        assert item.response == "X"
        assert item.kind is ItemKind.MERGED_GENERAL
        assert item.provenance is Provenance.MERGE2COMPARE
        assert item.query == "Which image has better quality, and why?"

    def test_group_query_is_the_ranking_question(self):
        client = ScriptedClient(reply="ranked")
        item = merge_compare(client, make_group(3), ABCD)
        assert item.query == "Please rank the quality of the images and justify your rankings."

    def test_transport_failure_after_retries_counts_dropped(self):
        client = ScriptedClient(fail_always=True)
        groups = [make_group(2, prefix=f"g{k}x") for k in range(3)]
        descs = {m.id: f"text {m.id}" for g in groups for m in g.members}
        items, stats = merge_compare_batch(
            client, groups, descs, sleep=lambda _: None
        )
        assert items == []
        assert stats == DistillStats(requested=3, parsed_ok=0, dropped_failed=3)
        # 3 attempts per group
        assert client.calls == 9

    def test_batch_counting_with_partial_failures(self):
        groups = [make_group(2, prefix=f"h{k}x") for k in range(100)]
        descs = {m.id: f"text {m.id}" for g in groups for m in g.members}
        failing = {g.group_id for g in groups[:7]}

        def reply(system, turns):
            text = turns[0].text
            for g in groups:
                if descs[g.members[0].id] in text and g.group_id in failing:
                    return "   "  # blank output: counted as a failed generation
            return "a clean comparison"

        client = ScriptedClient(reply=reply)
        items, stats = merge_compare_batch(client, groups, descs, max_in_flight=4)
        assert stats == DistillStats(requested=100, parsed_ok=93, dropped_failed=7)
        assert len(items) == 93

    def test_retry_then_success(self):
        client = ScriptedClient(reply="ok", fail_first=2)
        item = merge_compare(client, make_group(2), ABCD, sleep=lambda _: None)
        assert item.response == "ok"
        assert client.calls == 3

    def test_response_cache_makes_reruns_free(self):
        cache = ResponseCache()
        group = make_group(2)
        client = ScriptedClient(reply="cached comparison")
        merge_compare(client, group, ABCD, cache=cache)
        merge_compare(client, group, ABCD, cache=cache)
        assert client.calls == 1

    def test_text_only_client_rejects_teach_turn(self):
        client = ScriptedClient(max_images=0)
        with pytest.raises(CapabilityError):
            teach_general(client, make_group(2))


class TestQAGeneration:
    WELL_FORMED = (
        "Q: Which image is sharpest?\n"
        "CORRECT: the first image\n"
        "WRONG: the second image; the third image\n"
        "ASPECT: sharpness\n"
    )

    def test_single_record(self):
        client = ScriptedClient(reply=self.WELL_FORMED)
        items, stats = generate_qa(client, make_group(3))
        assert stats == DistillStats(requested=1, parsed_ok=1, dropped_failed=0)
        (item,) = items
        assert item.question == "Which image is sharpest?"
        assert item.correct == "the first image"
        assert item.distractors == ("the second image", "the third image")
        assert item.aspect == "sharpness"

    def test_correct_duplicated_in_wrong_is_dropped(self):
        text = (
            "Q: Which is brightest?\n"
            "CORRECT: the first image\n"
            "WRONG: the first image; the second image\n"
        )
        client = ScriptedClient(reply=text)
        items, stats = generate_qa(client, make_group(2))
        assert items == []
        assert stats == DistillStats(requested=1, parsed_ok=0, dropped_failed=1)

    def test_unparseable_reply_counts_group_as_dropped(self):
        client = ScriptedClient(reply="I cannot answer that.")
        items, stats = generate_qa(client, make_group(2))
        assert items == []
        assert stats == DistillStats(requested=1, parsed_ok=0, dropped_failed=1)

    def test_mixed_records(self):
        text = (
            self.WELL_FORMED
            + "Q: Which is darkest?\nCORRECT: the second image\n"  # missing WRONG
            + "Q: Which has most noise?\nCORRECT: the third image\nWRONG: the first image\n"
        )
        client = ScriptedClient(reply=text)
        items, stats = generate_qa(client, make_group(3))
        assert stats == DistillStats(requested=3, parsed_ok=2, dropped_failed=1)
        assert [i.aspect for i in items] == ["sharpness", "general"]

    def test_parse_ignores_prose_between_records(self):
        text = "Sure! Here you go:\n" + self.WELL_FORMED + "Hope this helps."
        records, malformed = parse_qa_records(text)
        assert len(records) == 1 and malformed == 0

    def test_batch_aggregates_stats(self):
        groups = [make_group(2, prefix=f"q{k}x") for k in range(4)]
        client = ScriptedClient(reply=self.WELL_FORMED)
        items, stats = generate_qa_batch(client, groups, max_in_flight=2)
        assert stats.requested == 4 and stats.parsed_ok == 4

    def test_empty_aspect_list_rejected(self):
        with pytest.raises(DistillError):
            render_qa_prompt(make_group(2), [])

    def test_default_aspects_mentioned_in_prompt(self):
        turn = render_qa_prompt(make_group(2), DEFAULT_ASPECTS)
        for aspect in ("clarity", "lighting", "color"):
            assert aspect in turn.text


class TestMCQConversion:
    def qa(self, n_wrong=3):
        wrongs = ("the second image", "the third image", "the fourth image")[:n_wrong]
        return QAItem(
            group=make_group(n_wrong + 1),
            question="Which image is sharpest?",
            correct="the first image",
            distractors=wrongs,
            aspect="sharpness",
        )

    def test_four_options_contain_correct_exactly_once(self):
        mcq, direct = qa_to_mcq(self.qa(), seed=5)
        assert len(mcq.options) == 4
        assert mcq.options.count("the first image") == 1
        assert mcq.options[mcq.answer_index] == "the first image"
        assert direct.kind is ItemKind.TEACH_QA_DIRECT
        assert direct.response == "the first image"
        assert direct.options is None

    def test_same_seed_same_order(self):
        first, _ = qa_to_mcq(self.qa(), seed=123)
        second, _ = qa_to_mcq(self.qa(), seed=123)
        assert first.options == second.options
        assert first.answer_index == second.answer_index

    def test_two_option_mcq(self):
        mcq, _ = qa_to_mcq(self.qa(n_wrong=1), seed=0)
        assert len(mcq.options) == 2
        assert mcq.answer_index in (0, 1)

    @given(seed=st.integers(min_value=0, max_value=2**31 - 1))
    def test_options_are_a_permutation_for_all_seeds(self, seed):
        item = self.qa()
        mcq, _ = qa_to_mcq(item, seed=seed)
        assert sorted(mcq.options) == sorted((item.correct, *item.distractors))
        assert mcq.options[mcq.answer_index] == item.correct


def test_stats_invariant_enforced():
    with pytest.raises(DistillError):
        DistillStats(requested=2, parsed_ok=2, dropped_failed=1)
