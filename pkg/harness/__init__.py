# Harness package: evaluation, cache benchmark, property suite, sweeps
