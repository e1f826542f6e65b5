"""Generator, discriminator and embedding networks."""
