# Training package: demo datasets, denoising objective, optimizer loop
