"""Single-gateway LoRaWAN simulator and a history-enhanced actor-critic controller."""

__version__ = "0.1.0"
