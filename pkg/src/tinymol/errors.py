"""Shared exception base.

Every user-facing error in the package derives from :class:`Error`; the CLI
maps these to exit code 1 and anything else to exit code 2.
"""


class Error(Exception):
    pass
