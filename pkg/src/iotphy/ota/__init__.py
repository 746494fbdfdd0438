"""Over-the-air firmware update: codec, wire format, state machines and simulation."""
