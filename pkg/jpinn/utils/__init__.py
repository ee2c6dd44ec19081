"""Shared utilities: structured logging and seed derivation."""
