"""Maximum-margin training of Bayesian network classifiers."""
