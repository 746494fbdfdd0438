"""Software models of a low-power IoT SDR: LoRa and BLE basebands, the radio's
serial I/Q word codec, channel impairments and over-the-air firmware updates."""

__version__ = "0.1.0"
