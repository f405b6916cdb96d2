from .app import create_app
from .store import SessionStore, UnknownSession

__all__ = ["create_app", "SessionStore", "UnknownSession"]
