import pytest

from http_stub import StubLogitServer
from logitsep.backend import (
    CachedBackend,
    HttpBackend,
    LogitQuery,
    SyntheticBackend,
    SyntheticModelSpec,
    batch_query,
    cache_key,
    synthetic_logit,
)
from logitsep.corpus import render_prompt
from logitsep.errors import BackendError, BatchError, DataError, PromptTooLongError


def zero_shot(task, text):
    return render_prompt(task["template"], [], text)


class TestSyntheticLogit:
    SPEC = SyntheticModelSpec(
        affinity={"a": {"a": 2.0, "b": 0.0}, "b": {"a": 0.0, "b": 2.0}},
        sample_strength={0: 1.0, 1: 0.5},
    )

    def test_matching_classes(self):
        assert synthetic_logit(self.SPEC, 0, "a", " w", "a") == 2.0

    def test_linear_in_strength(self):
        assert synthetic_logit(self.SPEC, 1, "a", " w", "a") == 1.0

    def test_noise_is_deterministic_and_bounded(self):
        spec = SyntheticModelSpec(
            affinity={"a": {"a": 2.0, "b": 0.0}, "b": {"a": 0.0, "b": 2.0}},
            noise_scale=0.1,
            seed=13,
        )
        first = synthetic_logit(spec, 5, "a", " w", "a")
        second = synthetic_logit(spec, 5, "a", " w", "a")
        assert first == second
        assert abs(first - 2.0) <= 0.1

    def test_unknown_class_rejected(self):
        with pytest.raises(BackendError, match="unknown"):
            synthetic_logit(self.SPEC, 0, "c", " w", "a")


class TestSyntheticBackend:
    def test_planted_affinity_values(self, two_class_task):
        task = two_class_task
        ex = task["train"].examples[0]
        assert ex.label == "alpha"
        query = LogitQuery(zero_shot(task, ex.text), (" apt", " bold"))
        table = task["backend"].query(query)
        strength = task["strengths"][ex.id]
        assert table[" apt"] == pytest.approx(2.0 * strength)
        assert table[" bold"] == 0.0

    def test_repeat_query_identical(self, two_class_task):
        task = two_class_task
        query = LogitQuery(zero_shot(task, task["train"].examples[1].text), (" alpha", " beta"))
        assert task["backend"].query(query) == task["backend"].query(query)

    def test_unregistered_text_rejected(self, two_class_task):
        task = two_class_task
        with pytest.raises(BackendError, match="not registered"):
            task["backend"].query(LogitQuery(zero_shot(task, "never seen"), (" alpha",)))

    def test_unregistered_candidate_rejected(self, two_class_task):
        task = two_class_task
        prompt = zero_shot(task, task["train"].examples[0].text)
        with pytest.raises(BackendError, match="candidate"):
            task["backend"].query(LogitQuery(prompt, (" mystery",)))

    def test_query_text_recovered_from_k_shot_prompt(self, two_class_task):
        task = two_class_task
        demo = task["train"].examples[0]
        query_ex = task["train"].examples[1]
        prompt = render_prompt(task["template"], [(demo.text, [" alpha"])], query_ex.text)
        table = task["backend"].query(LogitQuery(prompt, (" beta",)))
        assert table[" beta"] == pytest.approx(2.0 * task["strengths"][query_ex.id])

    def test_budget_enforced(self, two_class_task, template):
        task = two_class_task
        tight = SyntheticBackend(
            task["spec"], [task["train"]], task["pool"], template, max_prompt_chars=10
        )
        with pytest.raises(PromptTooLongError) as err:
            tight.query(LogitQuery(zero_shot(task, task["train"].examples[0].text), (" alpha",)))
        assert err.value.budget == 10


class TestBatchQuery:
    def test_empty_list(self, two_class_task):
        assert batch_query(two_class_task["backend"], [], 4) == []

    def test_identical_queries_identical_tables(self, two_class_task):
        task = two_class_task
        q = LogitQuery(zero_shot(task, task["train"].examples[0].text), (" alpha", " beta"))
        a, b = batch_query(task["backend"], [q, q], 2)
        assert a == b

    def test_parallelism_does_not_change_results(self, two_class_task):
        task = two_class_task
        queries = [
            LogitQuery(zero_shot(task, ex.text), (" alpha", " apt", " beta", " bold"))
            for ex in task["train"].examples
        ] * 9  # 108 queries
        serial = batch_query(task["backend"], queries, 1)
        concurrent = batch_query(task["backend"], queries, 8)
        assert serial == concurrent

    def test_permuting_queries_permutes_results(self, two_class_task):
        task = two_class_task
        queries = [
            LogitQuery(zero_shot(task, ex.text), (" alpha", " beta"))
            for ex in task["train"].examples[:4]
        ]
        perm = [2, 0, 3, 1]
        direct = batch_query(task["backend"], [queries[i] for i in perm], 2)
        base = batch_query(task["backend"], queries, 2)
        assert direct == [base[i] for i in perm]

    def test_failure_reports_index(self, two_class_task):
        task = two_class_task
        good = LogitQuery(zero_shot(task, task["train"].examples[0].text), (" alpha",))
        bad = LogitQuery(zero_shot(task, "unknown text"), (" alpha",))
        with pytest.raises(BatchError) as err:
            batch_query(task["backend"], [good, bad, good], 3)
        assert err.value.index == 1

    def test_rejects_bad_parallelism(self, two_class_task):
        with pytest.raises(DataError):
            batch_query(two_class_task["backend"], [], 0)


class TestLogitQueryValidation:
    def test_needs_candidates(self):
        with pytest.raises(DataError):
            LogitQuery("p", ())

    def test_rejects_duplicate_candidates(self):
        with pytest.raises(DataError):
            LogitQuery("p", (" a", " a"))


class TestHttpBackend:
    def test_info_and_query(self):
        with StubLogitServer() as server:
            backend = HttpBackend(endpoint=server.endpoint)
            assert backend.max_prompt_chars == 200
            assert backend.name == "http:stub-model"
            table = backend.query(LogitQuery("a prompt", (" x", " yy", " zzz")))
            assert list(table) == [" x", " yy", " zzz"]
            assert table == {" x": 2.0, " yy": 4.0, " zzz": 6.0}

    def test_env_var_supplies_endpoint(self, monkeypatch):
        with StubLogitServer() as server:
            monkeypatch.setenv("LOGITSEP_ENDPOINT", server.endpoint)
            backend = HttpBackend()
            assert backend.endpoint == server.endpoint

    def test_missing_endpoint_rejected(self, monkeypatch):
        monkeypatch.delenv("LOGITSEP_ENDPOINT", raising=False)
        with pytest.raises(BackendError, match="LOGITSEP_ENDPOINT"):
            HttpBackend()

    def test_retries_transient_failures(self):
        with StubLogitServer(fail_first=2) as server:
            backend = HttpBackend(endpoint=server.endpoint, backoff=0.01)
            table = backend.query(LogitQuery("p", (" x",)))
            assert table == {" x": 2.0}
            assert len(server.requests_seen) == 3

    def test_gives_up_after_retries(self):
        with StubLogitServer(fail_first=99) as server:
            backend = HttpBackend(endpoint=server.endpoint, backoff=0.01, retries=3)
            with pytest.raises(BackendError, match="after 3 attempts"):
                backend.query(LogitQuery("p", (" x",)))

    def test_over_budget_prompt_maps_to_length_error(self):
        with StubLogitServer(max_prompt_chars=20) as server:
            backend = HttpBackend(endpoint=server.endpoint)
            with pytest.raises(PromptTooLongError) as err:
                backend.query(LogitQuery("x" * 50, (" a",)))
            assert err.value.budget == 20


class TestCachedBackend:
    def test_hit_equals_miss(self, two_class_task, tmp_path):
        task = two_class_task
        cached = CachedBackend(task["backend"], tmp_path / "cache")
        q = LogitQuery(zero_shot(task, task["train"].examples[0].text), (" alpha", " beta"))
        miss = cached.query(q)
        hit = cached.query(q)
        fresh = task["backend"].query(q)
        assert miss == hit == fresh
        assert cached.stats()["hits"] == 2
        assert cached.stats()["misses"] == 2

    def test_warm_cache_reaches_zero_backend_calls(self, two_class_task, tmp_path, template):
        task = two_class_task
        first_inner = SyntheticBackend(task["spec"], [task["train"]], task["pool"], template)
        cached = CachedBackend(first_inner, tmp_path / "cache")
        queries = [
            LogitQuery(zero_shot(task, ex.text), (" alpha", " beta"))
            for ex in task["train"].examples
        ]
        batch_query(cached, queries, 4)
        issued_cold = first_inner.queries_issued
        assert issued_cold > 0

        second_inner = SyntheticBackend(task["spec"], [task["train"]], task["pool"], template)
        warm = CachedBackend(second_inner, tmp_path / "cache")
        repeat = batch_query(warm, queries, 4)
        assert second_inner.queries_issued == 0
        assert repeat == batch_query(cached, queries, 4)

    def test_partial_miss_only_queries_missing_candidates(self, two_class_task, tmp_path):
        task = two_class_task
        cached = CachedBackend(task["backend"], tmp_path / "cache")
        prompt = zero_shot(task, task["train"].examples[0].text)
        cached.query(LogitQuery(prompt, (" alpha",)))
        before = task["backend"].queries_issued
        table = cached.query(LogitQuery(prompt, (" alpha", " beta")))
        assert set(table) == {" alpha", " beta"}
        assert task["backend"].queries_issued == before + 1

    def test_cache_file_format(self, two_class_task, tmp_path):
        import json

        task = two_class_task
        cached = CachedBackend(task["backend"], tmp_path / "cache")
        prompt = zero_shot(task, task["train"].examples[0].text)
        cached.query(LogitQuery(prompt, (" alpha",)))
        lines = (tmp_path / "cache" / "logits.jsonl").read_text().splitlines()
        record = json.loads(lines[0])
        assert set(record) == {"key", "prompt_hash", "candidate", "logit"}
        assert record["key"] == cache_key(task["backend"].name, prompt, " alpha")
        assert len(record["key"]) == 64  # 256-bit hex


def test_cache_key_distinguishes_backends():
    assert cache_key("b1", "p", " c") != cache_key("b2", "p", " c")
    assert cache_key("b", "p1", " c") != cache_key("b", "p2", " c")
