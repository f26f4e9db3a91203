"""Patch-potential heating simulator for RF ion traps."""
