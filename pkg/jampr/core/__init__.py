"""Core functionality: configuration, routing environment and network primitives"""
