"""Chat-completion backends: a remote HTTP client, a record/replay pair for
deterministic offline testing, and the request-hashing scheme they share.

Scripted replay keys every request by a stable hash of its content. The SVG
attachment is excluded from the key (it is a rendering of the XML that is
already hashed), so recorded fixtures stay valid across cosmetic SVG changes.
"""

from __future__ import annotations

import os
import threading
from pathlib import Path
from typing import Protocol

from .errors import BackendError, ScriptedBackendMiss
from .util import stable_hash


class ChatBackend(Protocol):
    def complete(
        self,
        role: str,
        system_prompt: str,
        user_content: str,
        attachments: dict[str, str] | None = None,
    ) -> str:
        """One completion. ``attachments`` may carry canvas_xml / canvas_svg."""
        ...


def request_key(
    role: str,
    system_prompt: str,
    user_content: str,
    attachments: dict[str, str] | None,
) -> str:
    """Stable fixture key for a request; ignores the canvas_svg attachment."""
    hashed_attachments = {
        k: v for k, v in sorted((attachments or {}).items()) if k != "canvas_svg"
    }
    return stable_hash(
        {
            "role": role,
            "system": system_prompt,
            "user": user_content,
            "attachments": hashed_attachments,
        }
    )


class ScriptedBackend:
    """Replays fixture responses; unknown requests fail loudly."""

    def __init__(self, fixture_dir: str | Path):
        self.fixture_dir = Path(fixture_dir)
        if not self.fixture_dir.is_dir():
            raise BackendError(f"fixture directory {self.fixture_dir} does not exist")

    def complete(self, role, system_prompt, user_content, attachments=None) -> str:
        key = request_key(role, system_prompt, user_content, attachments)
        path = self.fixture_dir / f"{key}.txt"
        if not path.is_file():
            available = len(list(self.fixture_dir.glob("*.txt")))
            raise ScriptedBackendMiss(
                f"no fixture for role {role!r} request {key} "
                f"({available} fixtures present in {self.fixture_dir})"
            )
        return path.read_text(encoding="utf-8")


class RecordingBackend:
    """Wraps a live backend and writes every response as a replay fixture."""

    def __init__(self, inner: ChatBackend, fixture_dir: str | Path):
        self.inner = inner
        self.fixture_dir = Path(fixture_dir)
        self.fixture_dir.mkdir(parents=True, exist_ok=True)

    def complete(self, role, system_prompt, user_content, attachments=None) -> str:
        response = self.inner.complete(role, system_prompt, user_content, attachments)
        key = request_key(role, system_prompt, user_content, attachments)
        (self.fixture_dir / f"{key}.txt").write_text(response, encoding="utf-8")
        return response


class RemoteBackend:
    """OpenAI-style chat-completions client over HTTP.

    The SVG rendering travels as a fenced block in the user message; binary
    image upload is intentionally out of scope.
    """

    def __init__(
        self,
        endpoint: str,
        model: str,
        api_key_env: str = "FIGFORGE_API_KEY",
        timeout: float = 120.0,
        max_parallel: int = 4,
    ):
        self.endpoint = endpoint
        self.model = model
        self.api_key_env = api_key_env
        self.timeout = timeout
        self._gate = threading.Semaphore(max(1, max_parallel))

    def complete(self, role, system_prompt, user_content, attachments=None) -> str:
        import requests

        content = user_content
        for name, body in sorted((attachments or {}).items()):
            content += f"\n\n--- attachment: {name} ---\n```\n{body}\n```"
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(self.api_key_env)
        if key:
            headers["Authorization"] = f"Bearer {key}"
        payload = {
            "model": self.model,
            "messages": [
                {"role": "system", "content": system_prompt},
                {"role": "user", "content": content},
            ],
        }
        with self._gate:
            try:
                response = requests.post(
                    self.endpoint, json=payload, headers=headers, timeout=self.timeout
                )
                response.raise_for_status()
                data = response.json()
                return data["choices"][0]["message"]["content"]
            except Exception as exc:
                raise BackendError(f"chat request for role {role!r} failed: {exc}") from exc
