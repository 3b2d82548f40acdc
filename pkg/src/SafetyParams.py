class SafetyParams:
    """Parameters of the smooth safety-distance function D_safe."""

    def __init__(self, d_min: float = 5.0, tau: float = 0.5, delta_smooth: float = 1.0, beta_act: float = 0.1,
                 s_act: float = -50.0, safety_margin: float = 1.0) -> None:
        if d_min <= 0:
            raise ValueError("Invalid d_min. Must be positive.")
        if tau < 0:
            raise ValueError("Invalid tau. Must be nonnegative.")
        if delta_smooth <= 0:
            raise ValueError("Invalid delta_smooth. Must be positive.")
        if beta_act <= 0:
            raise ValueError("Invalid beta_act. Must be positive.")
        if s_act >= 0:
            raise ValueError("Invalid s_act. Must be negative (before the merge point).")
        if safety_margin < 0:
            raise ValueError("Invalid safety_margin. Must be nonnegative.")

        self.d_min: float = float(d_min)
        self.tau: float = float(tau)
        self.delta_smooth: float = float(delta_smooth)
        self.beta_act: float = float(beta_act)
        self.s_act: float = float(s_act)
        self.safety_margin: float = float(safety_margin)

    @classmethod
    def from_config(cls, safety_config) -> "SafetyParams":
        return cls(**safety_config.model_dump())

    def required_gap(self, v1: float) -> float:
        """Headway gap plus the safety buffer: d_min + tau * v1 + margin."""
        return self.d_min + self.tau * v1 + self.safety_margin
