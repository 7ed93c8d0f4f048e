"""Summary key -> anchor string. Each key written to a summary.json appears here
exactly once; ``docs/traceability.json`` is a copy kept in sync by the tests."""

ANCHORS = {
    # solve
    "mass_nonincreasing": "mass of the kill-free solution is non-increasing",
    "sup_bound": "sup norm of the solution never exceeds that of the datum",
    # mass
    "mass_converged": "rescaled mass converges to the asymptotic mass",
    "mass_monotone": "rescaled mass is non-decreasing in time",
    "sandwich_lower": "damped heat flow of the datum bounds the solution from below",
    "sandwich_upper_bounded": "solution is bounded above by a constant times the damped heat flow",
    "profile_decrease": "rescaled solution approaches the asymptotic mass times the heat kernel",
    # simulate
    "battery": "estimator battery over independent replicas",
    # duality
    "markov": "multiplicative functional of the particle system equals the product of solution values",
    "laplace": "Laplace functional of the particle system equals the log-transformed flow",
    "occupation": "joint Laplace functional of terminal state and occupation time equals the killed solve",
    "trivial_rows": "degenerate duality rows are exact",
    "longtime_trend": "long-time law of the particle system is the killed Brownian law times the asymptotic mass",
    # splitting
    "splitting_rate": "first-order convergence of the alternating source/flow product",
    "splitting_final_error": "alternating product approximates the killed log flow",
    # occupation
    "limit_one": "Laplace transform of the occupation time tends to zero",
    "limit_two": "occupation time scaled by 1/T has Laplace transform tending to one at t = alpha ln T",
    "g_T_oracle": "closed-form solution of the linear comparison ODE",
    "g_T_lower_bound": "linear comparison ODE bounds the scaled killed solution from below",
    # suite
    "c1_constant_exactness": "constant-data reduction of the semilinear equation",
    "c2_solution_invariants": "mass decrease, sup bound and L1 Lipschitz bound of the solution map",
    "c3_heat_sandwich": "two-sided heat-kernel bound of the solution",
    "c4_profile_and_mass": "rescaled solution approaches the asymptotic mass times the heat kernel",
    "c5_contraction_convexity": "asymptotic mass is Lipschitz and convex in the datum",
    "c6_duality": "particle system and PDE dualities",
    "c7_moment_oracles": "first-moment identities of particle count and occupation time",
    "c8_splitting": "alternating source/flow product converges to the killed log flow",
    "c9_occupation_limits": "long-time limits of occupation-time Laplace transforms",
    "c10_determinism": "same master seed gives byte-identical outputs",
}
