"""Trainable enhancement and reconstruction models (torch, CPU, deterministic)."""
