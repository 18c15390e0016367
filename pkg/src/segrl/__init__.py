"""Off-policy episodic RL: movement-primitive trajectories scored by a
segment-valuing transformer critic, on a self-contained float64 autodiff."""

__version__ = "0.1.0"
