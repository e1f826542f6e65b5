"""Test suite for modalmap."""
