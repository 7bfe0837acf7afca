# Config package: environment settings, run configuration, seeded streams
