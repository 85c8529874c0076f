"""How well does the backfitted sigma2 track the true log-likelihood noise?

Draws theta from a variant c posterior, estimates log-likelihoods at a range
of N_x and compares the GAM residual variance with the variance measured
against a high-accuracy reference (N_x = 4000 averaged over repeats).  The
residual variance of the reference itself shows how much of sigma2 is misfit
of the additive surface rather than Monte Carlo noise.
"""

import argparse

import numpy as np

from smc2nx import pf
from smc2nx.calibration import calibrate
from smc2nx.core import Smc2Config, run
from smc2nx.models import StochasticVolatility, simulate


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--T", type=int, default=60)
    ap.add_argument("--n-theta", type=int, default=200)
    ap.add_argument("--reference-nx", type=int, default=4000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    model = StochasticVolatility()
    _, y = simulate(model, np.array([-1.0, 0.9, 0.1]), args.T - 1, np.random.default_rng(42))
    st = run(Smc2Config(n_theta=args.n_theta, n_x_init=50, variant="c", seed=args.seed), model, y)
    thetas = st.thetas[np.argsort(-st.log_weights)]
    rng = np.random.default_rng(args.seed + 1)

    ref = np.array([np.mean([pf.run_pass(model, th, args.reference_nx, y, rng).cum_loglik
                             for _ in range(2)]) for th in thetas])
    floor = calibrate(thetas, ref, 1.0, 2, 10 ** 6, n_x=args.reference_nx).sigma2_hat
    print(f"GAM misfit floor (residual variance on the reference): {floor:.4f}")
    print(f"{'N_x':>6} {'sigma2_hat':>12} {'true var':>12} {'ratio':>8}")
    for n_x in (25, 50, 100, 200, 400):
        est = np.array([pf.run_pass(model, th, n_x, y, rng).cum_loglik for th in thetas])
        cal = calibrate(thetas, est, 1.0, 2, 10 ** 6, n_x=n_x)
        true_var = np.var(est - ref, ddof=1)
        print(f"{n_x:>6} {cal.sigma2_hat:>12.4f} {true_var:>12.4f} {cal.sigma2_hat / true_var:>8.3f}")


if __name__ == "__main__":
    main()
