"""Deep temporal networks: time surfaces, autoencoder feature layers and an MLP classifier."""

__version__ = "0.1.0"
