"""
Core laboratory infrastructure.

This module contains:
- Process configuration (environment overrides)
- Experiment configuration loading and validation
- Exception hierarchy and exit codes
"""
