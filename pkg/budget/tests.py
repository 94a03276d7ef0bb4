import time

import numpy as np
from django.test import SimpleTestCase
from numpy.testing import assert_allclose

from budget.logic import (
    BudgetPolicy,
    CensorPolicy,
    adapt_threshold,
    censor_decide,
    distortion_of_removal,
    maintain_budget,
    okfeb_step,
    run_okfeb,
    select_removal,
)
from commons.exceptions import InputError, PreconditionError
from datasets.logic import gen_dynamic_spheroids, gen_two_spheres
from kernels.logic import KernelSpec, kernel_matrix
from subspace.logic import StepSchedule, SubspaceModel, init_model, track_online

GAUSS = KernelSpec("gaussian", gamma=2.0)


def two_spheres(n, seed=0):
    return np.array([s.x for s in gen_two_spheres(n, sigma=0.1, seed=seed)])


def model_with(A, eta, spec=GAUSS, seed=0):
    """Model whose support set has len(A) random points, given A and eta."""
    A = np.asarray(A, dtype=float)
    X = np.random.default_rng(seed).standard_normal((A.shape[0], 3))
    model = SubspaceModel(spec, X[0], A[:1], lam=1e-3)
    for x in X[1:]:
        model.admit(x)
    model.A = A.copy()
    model.eta = np.asarray(eta, dtype=float)
    model.invalidate()
    return model


class CensorTests(SimpleTestCase):
    def test_strict_inequality(self):
        policy = CensorPolicy(epsilon=0.01)
        self.assertTrue(censor_decide(0.005, policy))
        self.assertFalse(censor_decide(0.01, policy))
        self.assertFalse(censor_decide(0.02, policy))

    def test_zero_threshold_never_censors(self):
        policy = CensorPolicy(epsilon=0.0)
        self.assertFalse(any(censor_decide(f, policy) for f in (0.0, 1e-300, 0.5)))

    def test_adaptive_steady_state(self):
        policy = CensorPolicy.adaptive(target_rate=0.5)
        policy.fits.extend([0.2] * 100)
        policy.admitted.extend([True, False] * 50)
        self.assertAlmostEqual(adapt_threshold(policy), 0.2)

    def test_adaptive_clipping(self):
        policy = CensorPolicy.adaptive(target_rate=0.5)
        policy.epsilon = 0.1
        policy.fits.extend([10.0] * 10)
        policy.admitted.extend([True] * 10)
        self.assertAlmostEqual(adapt_threshold(policy), 0.2)
        policy.fits.clear()
        policy.fits.extend([1e-6] * 10)
        self.assertAlmostEqual(adapt_threshold(policy), 0.1)

    def test_adaptive_tracks_target_rate(self):
        rng = np.random.default_rng(0)
        policy = CensorPolicy.adaptive(target_rate=0.5)
        admitted = 0
        for fit in rng.uniform(0.0, 1.0, 10_000):
            admitted += not censor_decide(fit, policy)
            adapt_threshold(policy)
        self.assertGreaterEqual(admitted / 10_000, 0.4)
        self.assertLessEqual(admitted / 10_000, 0.6)

    def test_invalid_policy(self):
        with self.assertRaises(InputError):
            CensorPolicy(epsilon=-1.0)
        with self.assertRaises(InputError):
            BudgetPolicy(B=0)
        with self.assertRaises(InputError):
            BudgetPolicy(beta=0.0)


class RemovalTests(SimpleTestCase):
    def test_recency_weighted_min_norm(self):
        model = model_with([[2.0], [1.0], [1.5]], [0.25, 0.5, 1.0])
        # scores 0.5, 0.5, 1.5: tie goes to the smaller index
        self.assertEqual(select_removal(model, "recency_min_norm"), 0)

    def test_fifo_drops_oldest(self):
        model = model_with([[1.0], [2.0], [3.0]], [1.0, 1.0, 1.0])
        model, removed = maintain_budget(model, BudgetPolicy(B=2, rule="fifo"))
        self.assertEqual(removed, 0)
        assert_allclose(model.A[:, 0], [2.0, 3.0])

    def test_distortion_reduces_to_row_norm(self):
        rng = np.random.default_rng(1)
        A = rng.standard_normal((6, 3))
        model = model_with(A, np.ones(6))
        for i in range(6):
            expected = model.K_S[i, i] * float(A[i] @ A[i])
            self.assertAlmostEqual(distortion_of_removal(model, i), expected, places=10)

    def test_distortion_matches_lifted_subspaces(self):
        rng = np.random.default_rng(2)
        A = rng.standard_normal((5, 2))
        model = model_with(A, np.ones(5), spec=KernelSpec("linear"), seed=3)
        Phi = model.support_x.T
        L = Phi @ A
        for i in range(5):
            keep = [j for j in range(5) if j != i]
            L_rest = Phi[:, keep] @ A[keep]
            self.assertAlmostEqual(distortion_of_removal(model, i), float(np.sum((L - L_rest) ** 2)), places=10)

    def test_brute_force_is_optimal(self):
        rng = np.random.default_rng(4)
        model = model_with(rng.standard_normal((7, 3)), np.ones(7))
        chosen = select_removal(model, "brute_force")
        values = [distortion_of_removal(model, i) for i in range(7)]
        self.assertEqual(values[chosen], min(values))

    def test_gaussian_without_forgetting_agrees_with_min_norm(self):
        # k(x, x) = 1, so the distortion is ||a_i||^2
        rng = np.random.default_rng(5)
        for seed in range(20):
            A = rng.standard_normal((8, 3))
            model = model_with(A, np.ones(8), seed=seed)
            self.assertEqual(select_removal(model, "brute_force"), select_removal(model, "recency_min_norm"))

    def test_within_budget_is_precondition_error(self):
        model = model_with([[1.0], [2.0]], [1.0, 1.0])
        with self.assertRaises(PreconditionError):
            maintain_budget(model, BudgetPolicy(B=2))

    def test_removal_keeps_gram_consistent(self):
        model = model_with(np.arange(12.0).reshape(4, 3), np.ones(4))
        maintain_budget(model, BudgetPolicy(B=3))
        assert_allclose(model.K_S, kernel_matrix(GAUSS, model.support_x), atol=1e-12)


class OkfebStepTests(SimpleTestCase):
    def test_censored_step_only_advances_counter(self):
        model = init_model(GAUSS, np.zeros(3), r=2, lam=1e-3)
        A, eta = model.A.copy(), model.eta.copy()
        censor = CensorPolicy(epsilon=10.0)
        model, res = okfeb_step(model, np.ones(3), censor, BudgetPolicy(B=4, beta=0.5), StepSchedule())
        self.assertTrue(res.censored)
        self.assertEqual(model.n, 2)
        self.assertEqual(model.sv_count, 1)
        assert_allclose(model.A, A)
        assert_allclose(model.eta, eta)

    def test_admission_degrades_eta(self):
        model = init_model(GAUSS, np.zeros(3), r=2, lam=1e-3)
        model, res = okfeb_step(model, np.ones(3), CensorPolicy(), BudgetPolicy(B=4, beta=0.5), StepSchedule())
        self.assertFalse(res.censored)
        assert_allclose(model.eta, [0.5, 1.0])

    def test_budget_is_respected(self):
        X = two_spheres(300, seed=1)
        budget = BudgetPolicy(B=8, beta=0.9)
        run = run_okfeb(X, GAUSS, r=4, lam=1e-3, censor=CensorPolicy(), budget=budget, schedule=StepSchedule(), seed=0)
        self.assertTrue(all(res.sv_count <= 8 for res in run.results))
        self.assertTrue(np.all(run.model.eta <= 1.0))
        self.assertEqual(run.model.n, 300)
        run.model.audit()

    def test_unbudgeted_uncensored_equals_nonparametric_tracker(self):
        X = two_spheres(120, seed=2)
        schedule = StepSchedule("harmonic")
        ok = run_okfeb(X, GAUSS, r=4, lam=1e-3, censor=CensorPolicy(epsilon=0.0),
                       budget=BudgetPolicy(B=None), schedule=schedule, init="random", seed=7)
        ref = track_online(X, GAUSS, r=4, lam=1e-3, schedule=schedule, rule="nonparametric", init="random", seed=7)
        self.assertTrue(np.array_equal(ok.fits, ref.fits))
        self.assertTrue(np.array_equal(ok.model.A, ref.model.A))
        self.assertTrue(np.array_equal(ok.Q, ref.Q))

    def test_higher_threshold_admits_no_more(self):
        X = two_spheres(400, seed=5)
        counts = []
        for epsilon in (0.0, 0.05, 0.3, 1.01):
            run = run_okfeb(X, GAUSS, r=4, lam=1e-3, censor=CensorPolicy(epsilon=epsilon),
                            budget=BudgetPolicy(B=None), schedule=StepSchedule("harmonic"), seed=0)
            counts.append(sum(not res.censored for res in run.results))
        self.assertEqual(counts[0], 399)
        self.assertEqual(counts[-1], 0)
        self.assertEqual(counts, sorted(counts, reverse=True))

    def test_dynamic_stream_fit_spikes_and_recovers(self):
        X = np.array([s.x for s in gen_dynamic_spheroids(2000, seed=0)])
        spec = KernelSpec("gaussian", gamma=2.0)
        width = 200
        for beta in (1.0, 0.9):
            run = run_okfeb(X, spec, r=10, lam=1e-3, censor=CensorPolicy(),
                            budget=BudgetPolicy(B=20, beta=beta), schedule=StepSchedule("inv_feature_norm"), seed=0)
            fits = run.fits
            self.assertTrue(np.all(np.isfinite(fits)))
            # fits[t] belongs to sample t + 2; window(n) averages samples n-199..n
            c = np.concatenate([[0.0], np.cumsum(fits)])

            def window(n):
                return (c[n - 1] - c[n - 1 - width]) / width

            plateau = window(1000)
            spike = max(window(n) for n in range(1001, 1101))
            trough = min(window(n) for n in range(1101, 1601))
            self.assertGreater(spike, plateau, f"beta {beta}")
            self.assertLessEqual(trough, 2.0 * plateau, f"beta {beta}")

    def test_per_step_cost_is_flat(self):
        X = np.random.default_rng(3).standard_normal((20_000, 5))
        spec = KernelSpec("gaussian", gamma=5.0)
        model = init_model(spec, X[0], r=16, lam=1e-3, init="random", seed=0)
        censor, budget, schedule = CensorPolicy(), BudgetPolicy(B=32), StepSchedule()
        times = []
        for x in X[1:]:
            start = time.perf_counter()
            okfeb_step(model, x, censor, budget, schedule)
            times.append(time.perf_counter() - start)
        deciles = np.array_split(np.array(times), 10)
        self.assertLessEqual(np.mean(deciles[-1]), 1.5 * np.mean(deciles[1]))
        self.assertEqual(model.sv_count, 32)
