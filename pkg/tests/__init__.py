"""Tests for peercount package."""
