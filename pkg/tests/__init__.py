"""Test suite for krylovsketch."""
