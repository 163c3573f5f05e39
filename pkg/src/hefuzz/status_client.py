"""
HTTP client for the responder status sidecar.
"""
import logging
from typing import Any, Dict, List

import requests

from .errors import TransportFailure

logger = logging.getLogger(__name__)


class StatusClient:
    """HTTP client for the responder status sidecar"""

    def __init__(self, base_url: str = "http://127.0.0.1:9461/", timeout: float = 10.0):
        self.base_url = base_url.rstrip("/")
        self.timeout = timeout

    def _get(self, path: str, **params: Any) -> Any:
        url = f"{self.base_url}{path}"
        try:
            response = requests.get(url, params=params or None, timeout=self.timeout)
            response.raise_for_status()
        except requests.RequestException as e:
            raise TransportFailure(f"status request {url} failed: {e}") from e
        return response.json()

    def health(self) -> Dict[str, Any]:
        return self._get("/health")

    def get_status(self) -> Dict[str, Any]:
        """Model summary and session counters"""
        return self._get("/status")

    def list_sessions(self, limit: int = 20) -> List[Dict[str, Any]]:
        return self._get("/sessions", limit=limit)

    def get_session(self, session_id: str) -> Dict[str, Any]:
        return self._get(f"/sessions/{session_id}")
