"""Simulation job entrypoints"""
