import numpy as np
import pytest

from skipgru import glove
from skipgru.data import Event, Session
from skipgru.errors import TrainingError, ValidationError

from helpers import central_diff, max_rel_err


def sessions_of(*seqs):
    return [
        Session(f"s{k}", [Event(t, p + 1, None) for p, t in enumerate(seq)])
        for k, seq in enumerate(seqs)
    ]


def cluster_corpus(n_clusters=10, tracks_per_cluster=4, n_sessions=200, seed=0):
    """Sessions drawing only from one cluster each: within-cluster pairs
    co-occur constantly, cross-cluster pairs never do."""
    rng = np.random.default_rng(seed)
    clusters = [
        [f"c{c}_t{i}" for i in range(tracks_per_cluster)] for c in range(n_clusters)
    ]
    seqs = []
    for _ in range(n_sessions):
        members = clusters[rng.integers(0, n_clusters)]
        seqs.append([members[rng.integers(0, len(members))] for _ in range(rng.integers(10, 21))])
    return clusters, sessions_of(*seqs)


class TestCooccurrence:
    def test_adjacent_pair(self):
        table = glove.build_cooccurrence(sessions_of(["A", "B"]), window=5)
        assert table.weight(table.track_ids.index("A"), table.track_ids.index("B")) == 1.0

    def test_distance_two(self):
        table = glove.build_cooccurrence(sessions_of(["A", "B", "C"]), window=5)
        a, c = table.track_ids.index("A"), table.track_ids.index("C")
        assert table.weight(a, c) == 0.5

    def test_window_cutoff(self):
        table = glove.build_cooccurrence(sessions_of(["A", "B", "C"]), window=1)
        a, c = table.track_ids.index("A"), table.track_ids.index("C")
        assert table.weight(a, c) == 0.0

    def test_repeats_accumulate(self):
        table = glove.build_cooccurrence(sessions_of(["A", "B", "A"]), window=5)
        a, b = table.track_ids.index("A"), table.track_ids.index("B")
        assert table.weight(a, b) == 2.0
        assert table.weight(a, a) == 0.0  # no diagonal

    def test_symmetry(self):
        _, sessions = cluster_corpus(n_sessions=30, seed=4)
        table = glove.build_cooccurrence(sessions, window=5)
        for (i, j), w in table.pairs.items():
            assert i < j
            assert table.weight(i, j) == table.weight(j, i) == w

    def test_merge_is_entrywise_sum(self):
        a = glove.build_cooccurrence(sessions_of(["A", "B", "C"] * 4), window=2)
        b = glove.build_cooccurrence(sessions_of(["C", "B", "A"] * 4), window=2)
        b.track_ids = a.track_ids
        total = {k: a.pairs.get(k, 0.0) + b.pairs.get(k, 0.0)
                 for k in set(a.pairs) | set(b.pairs)}
        a.merge(b)
        assert a.pairs == total

    def test_bad_window(self):
        with pytest.raises(ValidationError):
            glove.build_cooccurrence(sessions_of(["A", "B"]), window=0)


class TestGloveWeight:
    def test_cap(self):
        assert glove.glove_weight(100.0, x_max=100.0) == 1.0
        assert glove.glove_weight(250.0, x_max=100.0) == 1.0

    def test_formula(self):
        assert glove.glove_weight(50.0, x_max=100.0, alpha=0.75) == pytest.approx(
            0.5946035575013605, abs=1e-15
        )

    def test_zero(self):
        assert glove.glove_weight(0.0) == 0.0

    def test_negative_rejected(self):
        with pytest.raises(ValidationError):
            glove.glove_weight(-1.0)


class TestTraining:
    def test_loss_decreases(self):
        _, sessions = cluster_corpus(n_sessions=50, seed=1)
        table = glove.build_cooccurrence(sessions)
        emb = glove.train_glove(table, dims=16, epochs=8, seed=3)
        assert emb.epoch_losses[-1] < emb.epoch_losses[0]

    def test_single_pair_fit(self):
        table = glove.CooccurrenceTable(track_ids=["A", "B"], pairs={(0, 1): 4.0})
        emb = glove.train_glove(table, dims=4, epochs=400, seed=0)
        fit = float(emb.main[0] @ emb.context[1] + emb.main_bias[0] + emb.context_bias[1])
        assert abs(fit - np.log(4.0)) < 1e-2

    def test_deterministic(self):
        _, sessions = cluster_corpus(n_sessions=40, seed=2)
        table = glove.build_cooccurrence(sessions)
        a = glove.train_glove(table, dims=8, epochs=3, seed=9)
        b = glove.train_glove(table, dims=8, epochs=3, seed=9)
        assert np.array_equal(a.vectors(), b.vectors())
        assert a.epoch_losses == b.epoch_losses

    def test_empty_table(self):
        with pytest.raises(TrainingError):
            glove.train_glove(glove.CooccurrenceTable(track_ids=["A"]), dims=2, epochs=1)

    def test_cosine_separation(self):
        clusters, sessions = cluster_corpus(seed=5)
        table = glove.build_cooccurrence(sessions)
        emb = glove.train_glove(table, dims=24, epochs=20, seed=1)
        vecs = emb.as_dict()

        def cosine(a, b):
            return float(vecs[a] @ vecs[b] / (np.linalg.norm(vecs[a]) * np.linalg.norm(vecs[b])))

        within = cosine(clusters[0][0], clusters[0][1])
        across = cosine(clusters[0][0], clusters[1][0])
        assert within > across

    def test_objective_swap_symmetric(self):
        table = glove.build_cooccurrence(sessions_of(["A", "B", "C", "A", "C"]))
        emb = glove.train_glove(table, dims=3, epochs=2, seed=7)
        swapped = glove.EmbeddingTable(
            track_ids=emb.track_ids,
            main=emb.context.copy(),
            context=emb.main.copy(),
            main_bias=emb.context_bias.copy(),
            context_bias=emb.main_bias.copy(),
        )
        assert glove.objective(table, emb) == pytest.approx(
            glove.objective(table, swapped), rel=1e-12
        )

    def test_entry_gradients_match_finite_differences(self):
        table = glove.build_cooccurrence(sessions_of(["A", "B", "C", "B"]), window=2)
        rng = np.random.default_rng(12)
        v, d = table.n_tracks, 3
        emb = glove.EmbeddingTable(
            track_ids=list(table.track_ids),
            main=rng.normal(size=(v, d)),
            context=rng.normal(size=(v, d)),
            main_bias=rng.normal(size=v),
            context_bias=rng.normal(size=v),
        )
        i, j, x = table.directed_entries()
        f = np.array([glove.glove_weight(w) for w in x])
        _, gwi, gwj, gbi, gbj = glove._batch_gradients(
            emb.main, emb.context, emb.main_bias, emb.context_bias, i, j, np.log(x), f
        )
        analytic_main = np.zeros_like(emb.main)
        np.add.at(analytic_main, i, gwi)
        analytic_context = np.zeros_like(emb.context)
        np.add.at(analytic_context, j, gwj)

        def total(main):
            probe = glove.EmbeddingTable(
                track_ids=emb.track_ids, main=main, context=emb.context,
                main_bias=emb.main_bias, context_bias=emb.context_bias,
            )
            return glove.objective(table, probe)

        numeric = central_diff(total, emb.main)
        assert max_rel_err(analytic_main, numeric) < 1e-5

        def total_ctx(context):
            probe = glove.EmbeddingTable(
                track_ids=emb.track_ids, main=emb.main, context=context,
                main_bias=emb.main_bias, context_bias=emb.context_bias,
            )
            return glove.objective(table, probe)

        assert max_rel_err(analytic_context, central_diff(total_ctx, emb.context)) < 1e-5


class TestExport:
    def test_round_trip(self, tmp_path):
        table = glove.build_cooccurrence(sessions_of(["A", "B", "C", "A"]))
        emb = glove.train_glove(table, dims=5, epochs=3, seed=0)
        path = tmp_path / "emb.txt"
        glove.export_embeddings(emb, path)
        loaded = glove.load_embeddings(path)
        combined = emb.as_dict()
        assert set(loaded) == set(combined)
        for tid in loaded:
            assert np.max(np.abs(loaded[tid] - combined[tid])) <= 1e-12

    def test_format_shape(self, tmp_path):
        table = glove.build_cooccurrence(sessions_of(["A", "B", "C"]))
        emb = glove.train_glove(table, dims=4, epochs=1, seed=0)
        path = tmp_path / "emb.txt"
        glove.export_embeddings(emb, path)
        lines = path.read_text().splitlines()
        assert len(lines) == 3
        assert all(len(line.split()) == 5 for line in lines)

    def test_missing_file(self, tmp_path):
        with pytest.raises(OSError):
            glove.load_embeddings(tmp_path / "absent.txt")

    def test_ragged_file_rejected(self, tmp_path):
        path = tmp_path / "emb.txt"
        path.write_text("A 1.0 2.0\nB 1.0\n")
        with pytest.raises(ValidationError, match="line 2"):
            glove.load_embeddings(path)
