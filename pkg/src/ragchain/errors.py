"""Shared exception hierarchy.

Domain failures subclass RagchainError so the CLI can map them to exit
code 1; configuration and usage problems use ConfigError (exit code 2).
"""


class RagchainError(Exception):
    pass


class ConfigError(RagchainError):
    pass
