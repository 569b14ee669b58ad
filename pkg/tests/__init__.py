"""Test suite for disorder-markers."""
