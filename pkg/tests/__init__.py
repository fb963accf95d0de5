"""Test suite for TKIL."""
