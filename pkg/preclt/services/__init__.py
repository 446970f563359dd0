"""
Laboratory services.

- randgen, linalg, precision: data generation and exact precision identities
- clt, metrics, engine, experiments: statistics, Monte Carlo runs and checks
- acceptance, reports, thresholds, template_loader: verification and outputs
"""
