import itertools
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sensorforge.errors import EmptyResults
from sensorforge.gateway import ScriptedBackend, build_verdict_prompt
from sensorforge.model import CriterionResult, Valence, VerdictMode
from sensorforge.verdict import aggregate, smooth

POS, NEG = Valence.POSITIVE, Valence.NEGATIVE


def ok_result(cid, valence):
    return CriterionResult(cid, "R1", valence, f"desc {cid}", "m", 1, "raw")


def errored_result(cid):
    return CriterionResult(cid, "R1", None, "", "m", 1, "", error="ParseFailure: junk")


def truth_table_oracle(mode, valences):
    """Independent brute-force check: enumerate, count, decide."""
    positives = sum(1 for v in valences if v is POS)
    if mode is VerdictMode.ALL_OF:
        return POS if positives == len(valences) else NEG
    return POS if positives >= 1 else NEG


@pytest.mark.anyio
async def test_boolean_modes_match_truth_table_oracle_exhaustively():
    for n in range(1, 9):
        for bits in itertools.product((POS, NEG), repeat=n):
            results = [ok_result(f"C{i}", v) for i, v in enumerate(bits)]
            for mode in (VerdictMode.ALL_OF, VerdictMode.ANY_OF):
                verdict = await aggregate(results, mode, "goal")
                assert verdict.outcome is truth_table_oracle(mode, bits), (mode, bits)


@pytest.mark.anyio
async def test_all_of_identity_case():
    verdict = await aggregate([ok_result(f"C{i}", POS) for i in range(3)], VerdictMode.ALL_OF, "g")
    assert verdict.outcome is POS
    assert verdict.explanation == "all criteria passed"


@pytest.mark.anyio
async def test_boolean_definitions():
    assert (
        await aggregate([ok_result("C1", POS), ok_result("C2", NEG)], VerdictMode.ALL_OF, "g")
    ).outcome is NEG
    assert (
        await aggregate([ok_result("C1", NEG), ok_result("C2", POS)], VerdictMode.ANY_OF, "g")
    ).outcome is POS


@pytest.mark.anyio
async def test_contributing_lists_ids_in_order():
    verdict = await aggregate(
        [ok_result("C2", POS), ok_result("C1", POS)], VerdictMode.ALL_OF, "g"
    )
    assert verdict.contributing == ("C1", "C2")


@pytest.mark.anyio
async def test_failing_titles_in_explanation():
    titles = {"C1": "Outlets", "C2": "Knives"}
    verdict = await aggregate(
        [ok_result("C1", NEG), ok_result("C2", POS)], VerdictMode.ALL_OF, "g", titles=titles
    )
    assert "Outlets" in verdict.explanation


@pytest.mark.anyio
async def test_errored_results_excluded_and_mentioned():
    titles = {"C1": "Outlets", "C2": "Knives"}
    verdict = await aggregate(
        [ok_result("C1", POS), errored_result("C2")],
        VerdictMode.ALL_OF,
        "g",
        titles=titles,
    )
    assert verdict.outcome is POS  # errored result is not a fail
    assert "Knives" in verdict.explanation
    assert verdict.contributing == ("C1", "C2")


@pytest.mark.anyio
async def test_all_errored_raises_empty_results():
    with pytest.raises(EmptyResults):
        await aggregate([errored_result("C1")], VerdictMode.ALL_OF, "g")


@pytest.mark.anyio
async def test_empty_results_rejected():
    with pytest.raises(EmptyResults):
        await aggregate([], VerdictMode.ANY_OF, "g")


@pytest.mark.anyio
async def test_model_verdict_uses_scripted_fixture():
    results = [ok_result(f"C{i}", POS if i % 2 else NEG) for i in range(7)]
    titles = {f"C{i}": f"Check {i}" for i in range(7)}
    backend = ScriptedBackend()
    request = build_verdict_prompt("g", results, titles, temperature=0.8)
    backend.add(request, '{"outcome":"negative","explanation":"three checks failed"}')
    verdict = await aggregate(
        results, VerdictMode.MODEL, "g", gateway=backend, titles=titles
    )
    assert verdict.outcome is NEG
    assert verdict.explanation == "three checks failed"
    assert verdict.mode_used is VerdictMode.MODEL


# -- properties -----------------------------------------------------------------

valence_vectors = st.lists(st.sampled_from([POS, NEG]), min_size=1, max_size=8)


@given(valence_vectors)
def test_de_morgan(vs):
    import asyncio

    def negate(v):
        return POS if v is NEG else NEG

    results = [ok_result(f"C{i}", v) for i, v in enumerate(vs)]
    negated = [ok_result(f"C{i}", negate(v)) for i, v in enumerate(vs)]
    all_of = asyncio.run(aggregate(results, VerdictMode.ALL_OF, "g")).outcome
    any_of_negated = asyncio.run(aggregate(negated, VerdictMode.ANY_OF, "g")).outcome
    assert all_of is negate(any_of_negated)


@given(valence_vectors, st.randoms())
def test_boolean_aggregation_is_permutation_invariant(vs, rng):
    import asyncio

    results = [ok_result(f"C{i}", v) for i, v in enumerate(vs)]
    shuffled = list(results)
    rng.shuffle(shuffled)
    for mode in (VerdictMode.ALL_OF, VerdictMode.ANY_OF):
        a = asyncio.run(aggregate(results, mode, "g"))
        b = asyncio.run(aggregate(shuffled, mode, "g"))
        assert a.outcome is b.outcome
        assert a.contributing == b.contributing


class TestSmooth:
    def test_three_of_five_negative(self):
        assert smooth([NEG, POS, POS, NEG, NEG], 3, 5) is NEG

    def test_three_of_five_positive(self):
        assert smooth([NEG, POS, POS, POS, POS], 3, 5) is POS

    def test_k1_is_identity(self):
        for v in (POS, NEG):
            assert smooth([v], 1, 1) is v

    def test_short_history_pads_with_latest(self):
        # two negatives, padded to [NEG, NEG, NEG, NEG, NEG] -> negative
        assert smooth([POS, NEG], 3, 5) is NEG
        # [POS, POS, POS, POS, POS] after padding -> positive
        assert smooth([NEG, POS], 3, 5) is POS

    def test_invalid_parameters(self):
        with pytest.raises(ValueError):
            smooth([POS], 2, 1)
        with pytest.raises(ValueError):
            smooth([], 1, 1)

    @given(st.lists(st.sampled_from([POS, NEG]), min_size=1, max_size=20))
    def test_k1_identity_property(self, history):
        assert smooth(history, 1, 1) is history[-1]

    @given(st.lists(st.sampled_from([POS, NEG]), min_size=5, max_size=5), st.randoms())
    def test_depends_only_on_multiset(self, window, rng):
        shuffled = list(window)
        rng.shuffle(shuffled)
        assert smooth(window, 3, 5) is smooth(shuffled, 3, 5)
