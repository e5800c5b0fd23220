import logging
from dataclasses import dataclass

import numpy as np

from config import NOTIFIER_THRESHOLD, NOTIFIER_HISTORY

logger = logging.getLogger(__name__)


@dataclass
class NotifierConfig:
    threshold: float = NOTIFIER_THRESHOLD  # TH
    history: int = NOTIFIER_HISTORY  # npr

    def __post_init__(self):
        if self.history < 1:
            raise ValueError(f"Notifier history must be at least 1, got {self.history}")


def retraining_notifier(reward_history, current_reward: float, iteration: int,
                        threshold: float = NOTIFIER_THRESHOLD,
                        history: int = NOTIFIER_HISTORY) -> bool:
    """
    Store the reward at iteration mod history and decide whether the teacher
    should take control again.

    Returns False until `history` rewards have been seen, then True iff the
    mean of the stored rewards is strictly below the threshold.
    """
    reward_history[iteration % history] = current_reward
    if iteration + 1 < history:
        return False
    return float(np.mean(reward_history[:history])) < threshold


class RetrainingNotifier:
    """Monitors control-interval rewards and signals when retraining is needed."""

    def __init__(self, config: NotifierConfig = None):
        self.config = config or NotifierConfig()
        self.rewards = np.zeros(self.config.history)
        self.iteration = 0
        self.triggered = False

    def observe(self, reward: float) -> bool:
        self.triggered = retraining_notifier(
            self.rewards, reward, self.iteration,
            self.config.threshold, self.config.history,
        )
        self.iteration += 1
        if self.triggered:
            logger.debug(f"Mean reward {self.mean_reward():.3f} below {self.config.threshold}")
        return self.triggered

    def reset(self):
        """Forget the window; called on every stage switch."""
        self.rewards[:] = 0.0
        self.iteration = 0
        self.triggered = False

    def mean_reward(self) -> float:
        seen = min(self.iteration, self.config.history)
        return float(self.rewards[:seen].mean()) if seen else 0.0

    def get_state(self) -> dict:
        """Return current notifier state for logging."""
        return {
            "threshold": self.config.threshold,
            "history": self.config.history,
            "observed": self.iteration,
            "mean_reward": self.mean_reward(),
            "triggered": self.triggered,
        }
