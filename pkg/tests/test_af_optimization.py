import numpy as np

from mixedbo import acqopt
from mixedbo import problems
from mixedbo import surrogate

from base import MixedBOBaseTest


def optimizer_config(method, seed):
    return acqopt.AcqOptimizerConfig(method=method, seed=seed, restarts=20, max_iterations=200)


class TestAcquisitionOptimizationQuality(MixedBOBaseTest):
    SLOW = True

    def test_rosenbrock_medians(self):
        problem = problems.get_problem('rosenbrock10')
        values = {acqopt.PR_ADAM: [], acqopt.CONT_RELAX: [], acqopt.EXACT_ROUND_FD: []}
        for rep in range(50):
            mixed = self.ei(problem, self.fit(problem, 20, rep))
            # the relaxation needs a kernel over one-hot features
            onehot = self.ei(problem, self.fit(problem, 20, rep, structure=surrogate.ONEHOT))
            for method in values:
                af = onehot if method == acqopt.CONT_RELAX else mixed
                result = acqopt.optimize(af, problem.space, optimizer_config(method, rep))
                values[method].append(result.af_value)

        pr = np.median(values[acqopt.PR_ADAM])
        self.assertGreaterEqual(pr, np.median(values[acqopt.CONT_RELAX]))
        self.assertGreaterEqual(pr, np.median(values[acqopt.EXACT_ROUND_FD]))

    def test_branin_close_to_enumeration(self):
        reached = 0
        reps = 20
        for rep in range(reps):
            space, af = self.branin_ei(n=10, seed=rep)
            pr = acqopt.optimize(af, space, optimizer_config(acqopt.PR_ADAM, rep))
            gold = acqopt.optimize(af, space, optimizer_config(acqopt.ENUMERATION, rep))
            reached += pr.af_value >= 0.99 * gold.af_value
        self.assertGreaterEqual(reached, 0.8 * reps)

    def test_more_iterations_reach_the_optimum_more_often(self):
        budgets = (25, 50, 100, 200)
        reps = 20
        reached = dict.fromkeys(budgets, 0)
        for rep in range(reps):
            space, af = self.branin_ei(n=10, seed=rep)
            gold = acqopt.optimize(af, space, optimizer_config(acqopt.ENUMERATION, rep)).af_value
            for budget in budgets:
                cfg = acqopt.AcqOptimizerConfig(method=acqopt.PR_ADAM, seed=rep, restarts=20,
                                                max_iterations=budget)
                reached[budget] += acqopt.optimize(af, space, cfg).af_value >= 0.99 * gold

        rates = [reached[b] / reps for b in budgets]
        # one replication of slack per step
        for shorter, longer in zip(rates, rates[1:]):
            self.assertGreaterEqual(longer, shorter - 1.0 / reps)
        self.assertGreaterEqual(rates[-1], rates[0])
