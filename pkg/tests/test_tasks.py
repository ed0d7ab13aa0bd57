import numpy as np
import pytest

from csmgan import acoustics as ac
from csmgan import tasks
from csmgan.cxnn import ActivationSpec
from csmgan.gan import GanModel, TrainConfig

TINY = tasks.ScaleProfile("tiny", n_mics=6, bin_indices=(10, 11), n_train=6, n_test=4,
                          n_gen=4, n_dis=4, n_den=8)


@pytest.fixture(scope="module")
def cache():
    return tasks.SimulationCache()


@pytest.fixture(scope="module")
def split2(cache):
    return tasks.build_task_split(2, TINY, seed=0, cache=cache)


class TestTaskIds:
    @pytest.mark.parametrize("bad", [0, 6, 2.0, True, "1"])
    def test_rejects(self, bad):
        with pytest.raises(ValueError):
            tasks.TaskId(bad)

    def test_variants(self):
        expect = {1: (False, False, False), 2: (True, False, False), 3: (False, True, False),
                  4: (False, False, True), 5: (True, True, True)}
        for t, (amb, refl, dirv) in expect.items():
            vx, vy = tasks.task_variants(t)
            assert (vx.ambient, vx.reflections, vx.directivity) == (amb, refl, dirv)
            assert vy == ac.BASELINE

    def test_profiles(self):
        assert tasks.get_profile("paper").in_shape == (48, 48, 16)
        assert tasks.get_profile("desk").in_shape == (12, 12, 4)
        d = tasks.DESK.architecture()
        assert (d.n_gen, d.n_den, d.n_lay, d.activation) == (16, 64, 1, ActivationSpec("cardioid", alpha=0.5))
        with pytest.raises(ValueError):
            tasks.get_profile("huge")


class TestDatasets:
    def test_split_shapes_and_disjoint(self, split2):
        train, test = split2
        assert train.X.shape == (6, 6, 6, 2) and test.X.shape == (4, 6, 6, 2)
        assert list(train.model_indices) == list(range(6)) and list(test.model_indices) == [6, 7, 8, 9]

    def test_unit_slices_and_hermitian(self, split2):
        for ds in split2:
            for arr in (ds.X, ds.Y):
                np.testing.assert_allclose(np.linalg.norm(arr, axis=(1, 2)), 1.0, atol=1e-12)
                assert np.array_equal(arr, np.conj(np.swapaxes(arr, 1, 2)))

    def test_cache_shared_between_tasks(self, cache, split2):
        misses = cache.misses
        train3, _ = tasks.build_task_split(3, TINY, seed=0, cache=cache)
        # the dry monopole targets were already simulated for task 2
        assert cache.misses - misses == TINY.n_train + TINY.n_test
        assert np.array_equal(train3.Y, split2[0].Y)

    def test_task1_identity_pairs(self, cache):
        train, _ = tasks.build_task_split(1, TINY, seed=0, cache=cache)
        assert np.array_equal(train.X, train.Y)

    def test_workers_match_serial(self):
        models = tasks.sample_models(3, 0, 4)
        a = tasks.build_task_dataset(models, 4, "train", TINY)
        b = tasks.build_task_dataset(models, 4, "train", TINY, workers=2)
        assert np.array_equal(a.X, b.X) and np.array_equal(a.Y, b.Y)

    def test_too_few_models(self):
        with pytest.raises(ValueError):
            tasks.build_task_split(1, TINY, models=tasks.sample_models(0, 0, 3))

    def test_save_load(self, tmp_path, split2):
        train, _ = split2
        path = tmp_path / "train.csmd"
        tasks.save_dataset(train, path)
        back = tasks.load_dataset(path)
        assert np.array_equal(back.X, train.X) and np.array_equal(back.Y, train.Y)
        assert (back.task, back.role, back.profile) == (2, "train", "tiny")
        assert list(back.model_indices) == list(train.model_indices)

    def test_bad_role(self):
        with pytest.raises(ValueError):
            tasks.TaskDataset(1, "val", np.zeros((0, 2, 2, 1)), np.zeros((0, 2, 2, 1)), np.zeros(0))


class TestEvaluation:
    def test_identity_baseline(self, split2, cache):
        _, test = split2
        idacc = tasks.identity_accuracy(test)
        assert np.all((idacc > 0) & (idacc < 1))
        _, t1 = tasks.build_task_split(1, TINY, seed=0, cache=cache)
        assert np.all(tasks.identity_accuracy(t1) == 1.0)

    def test_untrained_generator_below_identity(self, cache):
        _, test = tasks.build_task_split(1, TINY, seed=0, cache=cache)
        rep = tasks.evaluate(GanModel(TINY.architecture()), test)
        assert rep.mean_G < rep.mean_Id == 1.0
        assert rep.summary()["samples"] == 4

    def test_report_roundtrip(self, tmp_path, split2):
        _, test = split2
        rep = tasks.evaluate(GanModel(TINY.architecture(), seed=1), test)
        n = tasks.export_scatter(rep, tmp_path / "s.csv")
        assert n == len(test)
        back = tasks.read_report(tmp_path / "s.csv", task=2)
        assert np.array_equal(back.g_acc_G, rep.g_acc_G) and np.array_equal(back.g_acc_Id, rep.g_acc_Id)

    def test_nonfinite_rejected(self, tmp_path):
        rep = tasks.EvalReport(1, np.array([0]), np.array([np.nan]), np.array([1.0]))
        with pytest.raises(ValueError):
            tasks.export_scatter(rep, tmp_path / "x.csv")


class TestHpo:
    def test_grid(self):
        pts = tasks.hpo_grid()
        assert len(pts) == 512 and len(set(pts)) == 512
        best = tasks.HpoGridPoint(64, 16, 512, 1, 2e-5, 2e-5, ActivationSpec("cardioid", alpha=0.5))
        assert best in pts

    def test_restrict(self):
        assert len(tasks.hpo_grid({"n_lay": [1], "lr_gen": [2e-5]})) == 64
        with pytest.raises(ValueError):
            tasks.hpo_grid({"n_gen": [48]})
        with pytest.raises(ValueError):
            tasks.HpoGridPoint(48, 16, 512, 1, 2e-5, 2e-5, ActivationSpec("cardioid", alpha=0.5))

    def test_subset(self):
        pts = tasks.hpo_grid()
        sel = tasks.select_subset(pts, 4)
        assert [i for i, _ in sel] == [0, 170, 341, 511]
        assert [i for i, _ in tasks.select_subset(pts, [5, 2])] == [5, 2]
        for bad in (0, 513, [1, 1], [600]):
            with pytest.raises(ValueError):
                tasks.select_subset(pts, bad)

    def test_run_ranks(self, tmp_path, cache):
        prof = TINY
        train, test = tasks.build_task_split(1, prof, seed=0, cache=cache)
        pts = [tasks.HpoGridPoint(32, 16, 512, 1, lr, 2e-5, act) for lr in (2e-4, 2e-5)
               for act in (ActivationSpec("modrelu", b=-0.25), ActivationSpec("cardioid", alpha=0.5))]
        sel = list(enumerate(pts))
        res = tasks.run_hpo(sel, train, test, TrainConfig(epochs=1, batch_size=4), seed=1)
        assert [r.rank for r in res] == [1, 2, 3, 4]
        assert all(a.g_acc >= b.g_acc for a, b in zip(res, res[1:]))
        # a point's score does not depend on the company it runs in
        alone = tasks.run_hpo([sel[2]], train, test, TrainConfig(epochs=1, batch_size=4), seed=1)
        assert alone[0].g_acc == next(r.g_acc for r in res if r.grid_index == 2)
        tasks.write_hpo_results(res, tmp_path / "h.csv")
        rows = (tmp_path / "h.csv").read_text().splitlines()
        assert rows[0].split(",") == list(tasks.HPO_COLUMNS) and len(rows) == 5
