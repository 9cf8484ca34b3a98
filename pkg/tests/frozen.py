"""Reference values derived independently of the package.

Every number here was produced by ``tests/oracles/derive_frozen.py`` (which
does not import ``missnet``) or by hand arithmetic noted alongside.
"""

import numpy as np

# Censored covariance of generic node 1 by enumeration over mask patterns.
RUBAR_NODE1 = np.array([0.706, 1.6, 0.8, 0.95, 1.2])
# Same, R_u = diag(1, 1.6, 0.8), all three components maskable, p = 0.3, s2 = 0.02.
RUBAR_ALL3 = np.array([0.706, 1.126, 0.566])

# Pooled normal-equation solve on 1e7 censored generic node-1 samples (seed 11).
BIAS_MC_1E7 = np.array([0.991580662674, -0.500022623852, 1.199908654139,
                        0.400401074641, 1.500460911543])
BIAS_COMP1_EXACT = 0.7 / 0.706            # 0.99150141643...

# E||G s||^2 over 1e5 brute-force draws (generic, p = 0.3, mu = 0.04): mean, std. error.
TRACE_Y_MC = (1.1473315525710965e-04, 3.0195655676076284e-07)

# Diagonal of Cov(u_bar^T (u - xi) F w) for generic nodes 1 and 2 (closed form,
# Gaussian moments; off-diagonal entries are exactly zero).
Z_NODE1_DIAG = np.array([0.006324, 0.4896, 0.2448, 0.2907, 0.3672])
Z_NODE2_DIAG = np.array([0.288816, 0.6912, 0.3456, 0.4104, 0.5184])

# Bayes error of the Gaussian-vs-Gaussian test, numerical integration (quad).
BAYES_ERR = {(1.0, 0.02, 0.3): 0.1576804855101725,
             (1.0, 0.04, 0.3): 0.20157206350723317}

# Household detector: inner H1 region boundary from root finding; for R = 1,
# q = 0.5, p = 0.3 the whole support of xi is decided missing.
HOUSEHOLD_INNER = 0.5

# Single agent, M = 1, first order in mu: (mu^2 sv R_ubar + mu^2 Var c) / (2 mu (1-p) r).
SCALAR_MSD = 0.002578571428571429          # mu=0.01 r=1 sv=0.01 p=0.3 s2=0.5 w=1
SCALAR_MSD_P0 = 5.000000000000001e-05      # p = 0: classical mu sv / 2
