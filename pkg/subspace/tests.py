import numpy as np
from django.test import SimpleTestCase
from numpy.testing import assert_allclose

from commons.exceptions import DimensionError, InputError, SingularityError
from datasets.logic import gen_two_spheres
from kernels.logic import KernelSpec, kernel_matrix
from subspace.logic import (
    StepSchedule,
    SubspaceModel,
    average_fit,
    batch_bkfe,
    extract_feature,
    init_model,
    kpca_model,
    ls_fit,
    nonparametric_update,
    objective,
    parametric_update,
    project,
    seed_block,
    track_online,
)

LINEAR = KernelSpec("linear")


def two_spheres(n, seed=0, sigma=0.1):
    return np.array([s.x for s in gen_two_spheres(n, sigma=sigma, seed=seed)])


def grow_linear_model(rng, m=6, D=4, r=2, lam=1e-2):
    """Linear-kernel model with m support vectors and random A."""
    X = rng.standard_normal((m, D))
    model = SubspaceModel(LINEAR, X[0], rng.standard_normal((1, r)), lam)
    for x in X[1:]:
        model.admit(x)
        model.A = np.vstack([model.A, rng.standard_normal((1, r))])
    model.invalidate()
    return model


class ExtractFeatureTests(SimpleTestCase):
    def test_single_support_vector(self):
        x = np.array([0.3, -0.2])
        model = SubspaceModel(KernelSpec("gaussian", gamma=1.0), x, np.array([[1.0]]), lam=0.0)
        q = extract_feature(model, x).q
        assert_allclose(q, [1.0], atol=1e-12)
        self.assertAlmostEqual(ls_fit(model, x, q), 0.0, places=12)

    def test_matches_explicit_ridge_projection(self):
        rng = np.random.default_rng(3)
        model = grow_linear_model(rng)
        L = model.support_x.T @ model.A
        x = rng.standard_normal(4)
        expected = np.linalg.solve(L.T @ L + model.lam * np.eye(2), L.T @ x)
        q = extract_feature(model, x).q
        assert_allclose(q, expected, rtol=1e-9, atol=1e-12)
        self.assertAlmostEqual(ls_fit(model, x, q), float(np.sum((x - L @ q) ** 2)), places=9)

    def test_singular_without_regularization(self):
        model = SubspaceModel(LINEAR, np.ones(2), np.zeros((1, 2)), lam=0.0)
        with self.assertRaises(SingularityError):
            extract_feature(model, np.ones(2))

    def test_dimension_mismatch(self):
        model = init_model(LINEAR, np.ones(3), r=2, lam=1e-3)
        with self.assertRaises(DimensionError):
            extract_feature(model, np.ones(4))
        with self.assertRaises(DimensionError):
            ls_fit(model, np.ones(3), np.ones(5))

    def test_fit_is_bounded_by_self_kernel(self):
        spec = KernelSpec("gaussian", gamma=2.0)
        X = two_spheres(60, seed=4)
        run = track_online(X, spec, r=3, lam=1e-3, schedule=StepSchedule("harmonic"), init="random", seed=0)
        self.assertTrue(np.all(run.fits >= 0.0))
        self.assertTrue(np.all(run.fits <= 1.0 + 1e-12))


class StepScheduleTests(SimpleTestCase):
    def test_modes(self):
        q = np.array([3.0, 4.0])
        self.assertEqual(StepSchedule("harmonic", 2.0).step(4, q), 0.5)
        self.assertEqual(StepSchedule("harmonic_sq", 1.0).step(4, q), 1 / 16)
        self.assertEqual(StepSchedule("inv_feature_norm", 1.0).step(4, q), 0.2)
        self.assertEqual(StepSchedule("constant", 0.3).step(4, q), 0.3)

    def test_positive_for_all_n(self):
        q = np.array([0.1, 0.0])
        for mode in ("harmonic", "harmonic_sq", "inv_feature_norm", "constant"):
            sched = StepSchedule(mode)
            self.assertTrue(all(sched.step(n, q) > 0 for n in range(1, 200)))

    def test_invalid(self):
        with self.assertRaises(InputError):
            StepSchedule("adagrad")
        with self.assertRaises(InputError):
            StepSchedule("constant", 0.0)


class BatchSolverTests(SimpleTestCase):
    def test_objective_trace_is_monotone(self):
        spec = KernelSpec("gaussian", gamma=1.0)
        for seed in range(50):
            X = two_spheres(30, seed=seed)
            res = batch_bkfe(X, spec, r=4, lam=1e-2, seed=seed)
            trace = np.array(res.objective_trace)
            self.assertTrue(np.all(np.diff(trace) <= 1e-12 * np.abs(trace[:-1])), f"seed {seed}")

    def test_objective_matches_result(self):
        spec = KernelSpec("gaussian", gamma=2.0)
        X = two_spheres(40, seed=1)
        res = batch_bkfe(X, spec, r=5, lam=1e-2, seed=1)
        self.assertAlmostEqual(objective(X, res.A, res.Q, spec, 1e-2), res.objective_trace[-1], places=12)
        self.assertEqual(res.iterations, len(res.objective_trace))
        self.assertTrue(np.isfinite(res.residual))

    def test_full_rank_reconstructs(self):
        spec = KernelSpec("gaussian", gamma=1.0)
        X = two_spheres(10, seed=2)
        res = batch_bkfe(X, spec, r=10, lam=1e-6, seed=0)
        self.assertLess(float(res.fits.mean()), 0.05)

    def test_reaches_stationary_point(self):
        spec = KernelSpec("gaussian", gamma=1.0)
        for seed in range(3):
            X = two_spheres(100, seed=seed)
            with self.assertLogs("subspace.logic", "WARNING"):
                res = batch_bkfe(X, spec, r=5, lam=1e-2, max_iter=20_000, tol=0.0, seed=seed)
            self.assertLessEqual(res.residual, 1e-6, f"seed {seed}")

    def test_rejects_bad_arguments(self):
        X = two_spheres(5)
        with self.assertRaises(InputError):
            batch_bkfe(X, LINEAR, r=6, lam=1e-2)
        with self.assertRaises(InputError):
            batch_bkfe(X, LINEAR, r=2, lam=0.0)


class OnlineUpdateTests(SimpleTestCase):
    def test_parametric_single_step(self):
        r, lam, mu = 3, 1e-3, 0.1
        model = init_model(LINEAR, np.array([1.0, 0.0]), r=r, lam=lam)
        q = np.array([0.2, -0.1, 0.4])
        parametric_update(model, np.array([0.0, 1.0]), q, mu)
        top = np.ones((1, r)) - mu * np.ones((1, r)) @ (np.outer(q, q) + (lam / 2) * np.eye(r))
        assert_allclose(model.A, np.vstack([top, mu * q]), atol=1e-15)
        self.assertEqual(model.n, 2)
        self.assertEqual(model.sv_count, 2)

    def test_nonparametric_matches_lifted_update(self):
        rng = np.random.default_rng(5)
        model = grow_linear_model(rng, m=5, D=4, r=2, lam=1e-2)
        model.n = 5
        L = model.support_x.T @ model.A
        x = rng.standard_normal(4)
        q = extract_feature(model, x).q
        mu = 0.05

        nonparametric_update(model, x, q, mu)
        Phi = model.support_x.T
        D_n = Phi @ Phi.T
        P = np.outer(q, q) + (model.lam / 6) * np.eye(2)
        expected = L - mu * D_n @ (L @ P - np.outer(x, q))
        assert_allclose(Phi @ model.A, expected, rtol=1e-10, atol=1e-12)
        self.assertEqual(model.n, 6)

    def test_gram_stays_consistent(self):
        spec = KernelSpec("gaussian", gamma=2.0)
        X = two_spheres(80, seed=6)
        for rule in ("parametric", "nonparametric"):
            run = track_online(X, spec, r=4, lam=1e-3, schedule=StepSchedule("harmonic"), rule=rule, init="random", seed=1)
            run.model.audit()
            self.assertEqual(run.model.sv_count, 80)
            self.assertEqual(run.model.n, 80)
            assert_allclose(run.model.K_S, kernel_matrix(spec, X), atol=1e-12)

    def test_average_fit_of_identical_stream(self):
        rng = np.random.default_rng(7)
        model = grow_linear_model(rng)
        X = rng.standard_normal((5, 4))
        Q = np.array([extract_feature(model, x).q for x in X])
        expected = np.mean([ls_fit(model, x, q) for x, q in zip(X, Q)])
        self.assertAlmostEqual(average_fit(model, X, Q), expected, places=10)

    def test_snapshot_is_independent(self):
        model = init_model(LINEAR, np.ones(2), r=2, lam=1e-2)
        snap = model.snapshot()
        nonparametric_update(model, np.array([1.0, -1.0]), np.array([0.5, 0.5]), 0.1)
        self.assertEqual(snap.sv_count, 1)
        self.assertEqual(model.sv_count, 2)

    def test_ones_init_keeps_identical_columns(self):
        spec = KernelSpec("gaussian", gamma=5.0)
        X = two_spheres(30, seed=8)
        run = track_online(X, spec, r=3, lam=1e-3, schedule=StepSchedule("harmonic"), init="ones")
        assert_allclose(run.model.A[:, 0], run.model.A[:, 2], atol=1e-10)

    def test_zero_step_only_appends_a_row(self):
        rng = np.random.default_rng(14)
        for update in (parametric_update, nonparametric_update):
            model = grow_linear_model(rng, m=4, D=3, r=2)
            A = model.A.copy()
            update(model, rng.standard_normal(3), rng.standard_normal(2), 0.0)
            assert_allclose(model.A, np.vstack([A, np.zeros((1, 2))]), atol=1e-15)
            self.assertEqual(model.sv_count, 5)

    def test_rejects_negative_or_nan_step(self):
        for mu in (-0.1, float("nan"), float("inf")):
            for update in (parametric_update, nonparametric_update):
                model = init_model(LINEAR, np.ones(2), r=2, lam=1e-2)
                with self.assertRaises(InputError):
                    update(model, np.array([1.0, 0.0]), np.ones(2), mu)

    def test_parametric_carries_gram_incrementally(self):
        spec = KernelSpec("gaussian", gamma=2.0)
        X = two_spheres(60, seed=15)
        run = track_online(X, spec, r=4, lam=1e-3, schedule=StepSchedule("harmonic"), rule="parametric", init="random", seed=3)
        model = run.model
        fresh = model.A.T @ kernel_matrix(spec, model.support_x) @ model.A
        assert_allclose(model.projected_gram(), fresh, rtol=1e-9, atol=1e-12)

    def test_nonparametric_step_follows_instantaneous_gradient(self):
        # linear kernel, mu = 1: [A;0] - A_new is the gradient of
        # 1/2 ||x - X_+^T A q||^2 + lam/(2n) ||X_+^T A||_F^2 in A
        rng = np.random.default_rng(12)
        model = grow_linear_model(rng, m=5, D=3, r=2, lam=0.1)
        model.n = 5
        n = model.n + 1
        x = rng.standard_normal(3)
        q = rng.standard_normal(2)
        A0 = np.vstack([model.A, np.zeros((1, 2))])
        X_plus = np.vstack([model.support_x, x])

        def cost(A):
            L = X_plus.T @ A
            return 0.5 * np.sum((x - L @ q) ** 2) + model.lam / (2 * n) * np.sum(L * L)

        nonparametric_update(model, x, q, 1.0)
        h = 1e-6
        fd = np.zeros_like(A0)
        for idx in np.ndindex(*A0.shape):
            E = np.zeros_like(A0)
            E[idx] = h
            fd[idx] = (cost(A0 + E) - cost(A0 - E)) / (2 * h)
        assert_allclose(A0 - model.A, fd, rtol=1e-5, atol=1e-7)

    def test_feature_minimizes_regularized_cost(self):
        spec = KernelSpec("gaussian", gamma=2.0)
        X = two_spheres(50, seed=9)
        model = track_online(X[:40], spec, r=4, lam=1e-2, schedule=StepSchedule("harmonic"), init="random", seed=2).model
        G = model.projected_gram()
        rng = np.random.default_rng(13)
        for x in X[40:]:
            proj = project(model, x)
            b = model.A.T @ proj.k

            def cost(q):
                return proj.kappa - 2.0 * b @ q + q @ G @ q + model.lam * q @ q

            best = cost(proj.q)
            for scale in (1e-4, 1e-2, 1.0):
                for _ in range(20):
                    self.assertGreaterEqual(cost(proj.q + scale * rng.standard_normal(4)), best - 1e-12)


class KpcaInitTests(SimpleTestCase):
    def test_columns_are_orthonormal_directions(self):
        spec = KernelSpec("gaussian", gamma=5.0)
        X = two_spheres(40, seed=16)
        model = kpca_model(spec, X, r=4, lam=1e-3)
        self.assertEqual(model.sv_count, 40)
        self.assertEqual(model.n, 40)
        assert_allclose(model.projected_gram(), np.eye(4), atol=1e-8)
        model.audit()

    def test_leading_direction_matches_eigenvector(self):
        X = np.random.default_rng(17).standard_normal((30, 3)) * np.array([3.0, 1.0, 0.2])
        model = kpca_model(LINEAR, X, r=1, lam=1e-6)
        L = X.T @ model.A[:, 0]
        top = np.linalg.eigh(X.T @ X)[1][:, -1]
        self.assertAlmostEqual(abs(float(L @ top)), 1.0, places=8)

    def test_seed_block(self):
        X = two_spheres(20, seed=18)
        self.assertEqual(seed_block(X, 3, "ones")[1], 1)
        block, m = seed_block(X, 3, "kpca")
        self.assertEqual((m, block.shape[0]), (3, 3))
        self.assertEqual(seed_block(X, 3, "kpca", warmup=10)[1], 10)
        with self.assertRaises(InputError):
            seed_block(X, 3, "kpca", warmup=2)
        with self.assertRaises(InputError):
            seed_block(X, 3, "kpca", warmup=21)
        with self.assertRaises(InputError):
            seed_block(X, 3, "random", warmup=10)
        with self.assertRaises(InputError):
            seed_block(X[:0], 3, "ones")

    def test_too_few_warmup_samples(self):
        with self.assertRaises(InputError):
            kpca_model(LINEAR, np.ones((2, 3)), r=3, lam=1e-3)


class OnlineVersusBatchTests(SimpleTestCase):
    def test_trackers_approach_batch_fit(self):
        # the parametric rule steps L with c/n; the nonparametric step is
        # preconditioned by K_S, whose scale grows like n, so it takes c/n^2
        spec = KernelSpec("gaussian", gamma=100.0)
        X = two_spheres(5000, seed=0)
        batch = float(batch_bkfe(X, spec, r=7, lam=1e-3, seed=0).fits.mean())
        for rule, mode in (("parametric", "harmonic"), ("nonparametric", "harmonic_sq")):
            run = track_online(X, spec, r=7, lam=1e-3, schedule=StepSchedule(mode), rule=rule, init="kpca", warmup=200)
            online = average_fit(run.model, X[run.start:], run.Q)
            self.assertLessEqual(online, 1.15 * batch, f"{rule}: {online:.3e} vs batch {batch:.3e}")
