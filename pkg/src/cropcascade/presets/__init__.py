"""Packaged pipeline preset configs (.kv files)."""
