"""ParaGAN: cycle-consistent image translation conditioned on signed
distances to a hinge-trained decision hyperplane."""

__version__ = "0.1.0"
