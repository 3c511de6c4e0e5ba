"""Caption providers: text prompts derived from artworks."""
from __future__ import annotations

import hashlib
import re
from typing import Protocol

from .dataset import ArtworkRecord

_ARTIST_RE = re.compile(r"artwork by ([\w.-]+)")


class CaptionProvider(Protocol):
    provider_id: str

    def generate(self, record: ArtworkRecord) -> str: ...


class TemplateCaptionProvider:
    """Deterministic stand-in for an image interrogator.

    Produces ``"artwork by <artist_id>, study <digest>"`` where the digest is
    derived from the record id, so captions are stable per record.
    """

    provider_id = "template-v1"

    def generate(self, record: ArtworkRecord) -> str:
        if record.caption:
            return record.caption
        digest = hashlib.sha1(record.id.encode()).hexdigest()[:8]
        return f"artwork by {record.artist_id}, study {digest}"


def artist_in_caption(caption: str):
    m = _ARTIST_RE.search(caption)
    return m.group(1) if m else None


def query_captions(provider: CaptionProvider, records, n: int) -> list:
    """``n`` prompts naming the records' artist, cycling through ``records``."""
    records = list(records)
    if not records:
        raise ValueError("no records to caption")
    out = []
    for q in range(n):
        base = provider.generate(records[q % len(records)])
        rnd = q // len(records)
        out.append(base if rnd == 0 else f"{base}, variation {rnd}")
    return out
