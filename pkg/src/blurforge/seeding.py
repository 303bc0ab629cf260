"""Order-independent seed derivation."""

import hashlib
import json


def derive_seed(*parts) -> int:
    """Stable 63-bit seed from any JSON-serializable key parts."""
    key = json.dumps([str(p) if not isinstance(p, (int, str)) else p for p in parts])
    return int.from_bytes(hashlib.sha256(key.encode()).digest()[:8], "little") >> 1
