# Policy package: geometry, masks, schedule, model, cache, normalizer, checkpoint
