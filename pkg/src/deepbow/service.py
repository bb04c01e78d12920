"""Newline-delimited JSON scoring service over precomputed stores.

Each request is one JSON object per line; each response is one line.
Supported ops::

    {"op": "score",   "mode": "q_synonym", "qid": "q1", "pid": "p9"}
    {"op": "explain", "mode": "q_weight",  "qtext": "...", "pid": "p9"}
    {"op": "encode",  "text": "...", "side": "product"}

Queries and products can be given by id (``qid``/``pid``) or by text
(``qtext``/``ptext``). An id missing from its store falls back to encoding
the accompanying text when a model is loaded. Errors come back as
``{"error": <code>, "message": <text>}`` with code ``protocol``,
``not_found`` or ``mode_mismatch``.
"""

from __future__ import annotations

import json
import logging
import socketserver
import threading
from dataclasses import dataclass

from .bow import SparseBoW
from .inference import NO_TRUNCATION, PRODUCT, QUERY, Truncation
from .scoring import MODES, Q_SYNONYM, Q_WEIGHT, explain, score

log = logging.getLogger(__name__)


class ProtocolError(ValueError):
    code = "protocol"


class NotFoundError(KeyError):
    code = "not_found"


class ModeMismatchError(ValueError):
    code = "mode_mismatch"


@dataclass
class ServeConfig:
    port: int = 7431
    host: str = "127.0.0.1"
    threshold: float = 0.5
    mode: str = Q_SYNONYM
    query_truncation: Truncation = NO_TRUNCATION
    product_truncation: Truncation = Truncation("threshold", tau=0.4)


class Scorer:
    """Request handling, independent of any transport."""

    def __init__(self, query_store=None, product_store=None, model=None, config: ServeConfig | None = None):
        self.qstore = query_store
        self.pstore = product_store
        self.model = model
        self.config = config or ServeConfig()
        self._check_hashes()

    def _check_hashes(self):
        hashes = set()
        for st in (self.qstore, self.pstore):
            if st is not None and st.metadata.get("vocab_hash"):
                hashes.add(st.metadata["vocab_hash"])
        if self.model is not None:
            hashes.add(self.model.vocab.digest)
        if len(hashes) > 1:
            raise ValueError("stores and model were built against different vocabularies")

    @property
    def vocab(self):
        return self.model.vocab if self.model is not None else None

    def _stored_representation(self, store) -> str:
        if store is None:
            return ""
        return store.metadata.get("representation", "se")

    def _resolve(self, req: dict, side: str, mode: str) -> SparseBoW:
        id_key, text_key = ("qid", "qtext") if side == QUERY else ("pid", "ptext")
        store = self.qstore if side == QUERY else self.pstore
        ident, text = req.get(id_key), req.get(text_key)
        if ident is None and text is None:
            raise ProtocolError(f"request needs {id_key!r} or {text_key!r}")
        if ident is not None and store is not None and ident in store:
            if side == QUERY:
                rep = self._stored_representation(store)
                want = "tw" if mode == Q_WEIGHT else "se"
                if rep != want:
                    raise ModeMismatchError(f"query store holds {rep} representations; mode {mode} needs {want}")
            return store.get(ident)
        if self.model is None or text is None:
            what = f"{side} id {ident!r}" if ident is not None else f"{side} text"
            raise NotFoundError(f"{what} not available and no model loaded to encode it"
                                if self.model is None else f"{what} not in store and no text given")
        trunc = self.config.query_truncation if side == QUERY else self.config.product_truncation
        return self.model.encode(str(text), side, mode, trunc)

    def _mode(self, req: dict) -> str:
        mode = req.get("mode", self.config.mode)
        if mode not in MODES:
            raise ProtocolError(f"mode must be one of {list(MODES)}")
        return mode

    def score(self, req: dict) -> dict:
        mode = self._mode(req)
        q = self._resolve(req, QUERY, mode)
        d = self._resolve(req, PRODUCT, mode)
        s = score(q, d, mode)
        return {"score": s, "decision": "good" if s >= self.config.threshold else "bad"}

    def explain(self, req: dict) -> dict:
        mode = self._mode(req)
        q = self._resolve(req, QUERY, mode)
        d = self._resolve(req, PRODUCT, mode)
        return explain(q, d, self.vocab, mode).to_dict()

    def encode(self, req: dict) -> dict:
        if self.model is None:
            raise NotFoundError("no model loaded")
        text, side = req.get("text"), req.get("side", PRODUCT)
        if not isinstance(text, str) or side not in (QUERY, PRODUCT):
            raise ProtocolError("encode needs a string 'text' and side 'query' or 'product'")
        mode = self._mode(req)
        trunc = self.config.query_truncation if side == QUERY else self.config.product_truncation
        bow = self.model.encode(text, side, mode, trunc)
        return {"entries": [{"index": i, "term": self.vocab.surface(i), "weight": w} for i, w in bow]}

    def handle(self, req) -> dict:
        try:
            if not isinstance(req, dict):
                raise ProtocolError("request must be a JSON object")
            op = req.get("op")
            handler = {"score": self.score, "explain": self.explain, "encode": self.encode}.get(op)
            if handler is None:
                raise ProtocolError(f"unknown op {op!r}")
            return handler(req)
        except (ProtocolError, NotFoundError, ModeMismatchError) as exc:
            msg = exc.args[0] if exc.args else str(exc)
            return {"error": exc.code, "message": msg}
        except ValueError as exc:
            return {"error": "protocol", "message": str(exc)}

    def handle_line(self, line: str) -> str:
        try:
            req = json.loads(line)
        except json.JSONDecodeError as exc:
            resp = {"error": "protocol", "message": f"malformed JSON: {exc.msg}"}
        else:
            resp = self.handle(req)
        return json.dumps(resp, ensure_ascii=False)


class _Handler(socketserver.StreamRequestHandler):
    def handle(self):
        for raw in self.rfile:
            line = raw.decode("utf-8", errors="replace").strip()
            if not line:
                continue
            self.wfile.write((self.server.scorer.handle_line(line) + "\n").encode("utf-8"))
            self.wfile.flush()


class _Server(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True


def serve(query_store, product_store, model=None, config: ServeConfig | None = None,
          background: bool = False):
    """Start the TCP service. With ``background`` the server runs in a thread
    and is returned (call ``shutdown()`` and ``server_close()`` to stop);
    otherwise this blocks."""
    config = config or ServeConfig()
    server = _Server((config.host, config.port), _Handler)
    server.scorer = Scorer(query_store, product_store, model, config)
    log.info("serving on %s:%d", *server.server_address[:2])
    if background:
        threading.Thread(target=server.serve_forever, daemon=True).start()
        return server
    try:
        server.serve_forever()
    finally:
        server.server_close()
    return server
