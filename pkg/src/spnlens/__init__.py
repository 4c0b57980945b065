"""Sensor pattern noise fingerprinting with lens and dark-current energy decomposition."""
