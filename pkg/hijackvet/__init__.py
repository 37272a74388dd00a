"""HijackVet - Assess BGP subprefix hijack alarms against IRR, topology and TLS evidence."""

__version__ = "0.1.0"
__author__ = "HijackVet Team"
__description__ = "Assess BGP subprefix hijack alarms against IRR, topology and TLS evidence"
