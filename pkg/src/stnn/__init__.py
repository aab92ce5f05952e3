"""stnn: a symbolic description language for convolutional networks with
shape inference, mechanical gradient-graph derivation, and a self-contained
strided-tensor execution engine."""

__version__ = "0.1.0"
