# Tests for oscillating-cognition
