# Rollout package: AR sessions and the closed-loop episode runner
