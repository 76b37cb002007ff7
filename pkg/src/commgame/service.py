"""HTTP annotation service for the human-layperson study.

Each session presents explanation messages as shuffled word lists. The
classifier prediction and gold label stay server-side until the session is
complete; the client only ever sees tokens, hypotheses, and its own
answers. Answers append to a JSON-lines log so a crash loses nothing, and
every report can be reproduced offline by replaying that log.
"""

from __future__ import annotations

import json
import threading
import time
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from fastapi import FastAPI, HTTPException
from pydantic import BaseModel

from . import game
from .errors import AlignmentError, ConfigError, DataFormatError


@dataclass
class SessionItem:
    item_id: str
    tokens: list[str]  # already shuffled for presentation
    hypothesis: str | None
    y_hat: int  # hidden until completion
    y: int  # hidden until completion


@dataclass
class Session:
    session_id: str
    task: str
    label_names: list[str]
    items: list[SessionItem]
    answers: dict[str, dict] = field(default_factory=dict)

    @property
    def complete(self) -> bool:
        return len(self.answers) == len(self.items)

    def to_client(self) -> dict:
        """Serialization that structurally cannot leak hidden fields."""
        return {
            "session_id": self.session_id,
            "task": self.task,
            "label_names": self.label_names,
            "items": [
                {
                    "item_id": it.item_id,
                    "tokens": it.tokens,
                    "hypothesis": it.hypothesis,
                }
                for it in self.items
            ],
            "answered": [
                it.item_id for it in self.items if it.item_id in self.answers
            ],
            "complete": self.complete,
        }


def session_from_dump(
    records: list[dict],
    session_id: str,
    label_names: list[str],
    seed: int = 0,
    size: int = 200,
    task: str = "textclf",
) -> Session:
    """Build a session from an explanation dump: take up to `size` items,
    shuffle item order and each item's tokens under a per-session seed."""
    if not records:
        raise DataFormatError(f"session {session_id}: empty explanation dump")
    rng = np.random.default_rng([seed, zlib.crc32(session_id.encode("utf-8"))])
    picked = list(records)
    if len(picked) > size:
        idx = sorted(rng.choice(len(picked), size=size, replace=False).tolist())
        picked = [picked[i] for i in idx]
    items = []
    for rec in picked:
        tokens = list(rec["message_tokens"])
        rng.shuffle(tokens)
        items.append(
            SessionItem(
                item_id=str(rec["example_id"]),
                tokens=tokens,
                hypothesis=" ".join(rec["hypothesis"]) if rec.get("hypothesis") else None,
                y_hat=int(rec["y_hat"]),
                y=int(rec["y"]),
            )
        )
    order = rng.permutation(len(items))
    items = [items[i] for i in order]
    return Session(session_id, task, label_names, items)


def session_report(session: Session) -> dict:
    """CSR_H/ACC_H and the unsure fraction. The protocol does not fix
    whether unsure answers count, so both variants are reported."""
    items = session.items
    answers = [session.answers[it.item_id] for it in items]
    n = len(items)
    csr_all = sum(a["label"] == it.y_hat for a, it in zip(answers, items)) / n
    acc_all = sum(a["label"] == it.y for a, it in zip(answers, items)) / n
    unsure = sum(a["unsure"] for a in answers) / n
    sure = [(a, it) for a, it in zip(answers, items) if not a["unsure"]]
    if sure:
        csr_sure = sum(a["label"] == it.y_hat for a, it in sure) / len(sure)
        acc_sure = sum(a["label"] == it.y for a, it in sure) / len(sure)
    else:
        csr_sure = acc_sure = None
    return {
        "session_id": session.session_id,
        "n_items": n,
        "csr_h": csr_all,
        "acc_h": acc_all,
        "unsure_fraction": unsure,
        "csr_h_sure_only": csr_sure,
        "acc_h_sure_only": acc_sure,
    }


def replay_report(answer_log: str | Path, sessions: list[Session]) -> dict[str, dict]:
    """Rebuild every completed session's report purely from the append-only
    log; used to prove the live reports carry no extra state."""
    fresh = {
        s.session_id: Session(s.session_id, s.task, s.label_names, s.items)
        for s in sessions
    }
    path = Path(answer_log)
    if path.exists():
        with path.open(encoding="utf-8") as f:
            for line in f:
                line = line.strip()
                if not line:
                    continue
                rec = json.loads(line)
                session = fresh.get(rec["session"])
                if session is None:
                    continue
                session.answers[rec["item"]] = {
                    "label": rec["label"],
                    "unsure": rec["unsure"],
                    "ts": rec["ts"],
                }
    return {
        sid: session_report(s) for sid, s in fresh.items() if s.complete
    }


class AnswerBody(BaseModel):
    item_id: str
    label: int
    unsure: bool = False


def _fail(status: int, error: str, message: str):
    raise HTTPException(status_code=status, detail={"error": error, "message": message})


def create_app(sessions: list[Session], answer_log: str | Path) -> FastAPI:
    ids = [s.session_id for s in sessions]
    if len(set(ids)) != len(ids):
        raise ConfigError(f"duplicate session ids: {ids}")
    by_id = {s.session_id: s for s in sessions}
    log_path = Path(answer_log)
    log_path.parent.mkdir(parents=True, exist_ok=True)
    lock = threading.Lock()

    # resume: answers persisted by an earlier process are replayed into state
    if log_path.exists():
        with log_path.open(encoding="utf-8") as f:
            for line in f:
                line = line.strip()
                if not line:
                    continue
                rec = json.loads(line)
                session = by_id.get(rec["session"])
                if session is not None:
                    session.answers[rec["item"]] = {
                        "label": rec["label"],
                        "unsure": rec["unsure"],
                        "ts": rec["ts"],
                    }

    app = FastAPI(title="annotation service")
    app.state.sessions = by_id
    app.state.answer_log = log_path

    def get_session(session_id: str) -> Session:
        session = by_id.get(session_id)
        if session is None:
            _fail(404, "unknown_session", f"no session named {session_id!r}")
        return session

    @app.get("/sessions")
    def list_sessions():
        return {
            "sessions": [
                {
                    "session_id": s.session_id,
                    "task": s.task,
                    "n_items": len(s.items),
                    "n_answered": len(s.answers),
                    "complete": s.complete,
                }
                for s in sessions
            ]
        }

    @app.get("/session/{session_id}")
    def read_session(session_id: str):
        return get_session(session_id).to_client()

    @app.post("/session/{session_id}/answer")
    def submit_answer(session_id: str, body: AnswerBody):
        session = get_session(session_id)
        if session.complete:
            _fail(409, "session_closed", "all items already answered")
        item_ids = {it.item_id for it in session.items}
        if body.item_id not in item_ids:
            _fail(404, "unknown_item", f"no item {body.item_id!r} in this session")
        if body.item_id in session.answers:
            _fail(409, "already_answered", "answers are one-shot; no revisions")
        if not 0 <= body.label < len(session.label_names):
            _fail(
                422,
                "unknown_label",
                f"label must be in 0..{len(session.label_names) - 1}",
            )
        answer = {"label": body.label, "unsure": body.unsure, "ts": time.time()}
        with lock:
            with log_path.open("a", encoding="utf-8") as f:
                f.write(
                    json.dumps(
                        {
                            "session": session_id,
                            "item": body.item_id,
                            "label": body.label,
                            "unsure": body.unsure,
                            "ts": answer["ts"],
                        }
                    )
                    + "\n"
                )
                f.flush()
            session.answers[body.item_id] = answer
        return {
            "accepted": True,
            "remaining": len(session.items) - len(session.answers),
            "complete": session.complete,
        }

    @app.get("/session/{session_id}/report")
    def read_report(session_id: str):
        session = get_session(session_id)
        if not session.complete:
            _fail(
                409,
                "session_incomplete",
                f"{len(session.answers)}/{len(session.items)} items answered",
            )
        return session_report(session)

    @app.get("/agreement")
    def read_agreement(a: str, b: str):
        sa, sb = get_session(a), get_session(b)
        for s in (sa, sb):
            if not s.complete:
                _fail(409, "session_incomplete", f"session {s.session_id!r} is open")
        ids_a = sorted(it.item_id for it in sa.items)
        ids_b = sorted(it.item_id for it in sb.items)
        if ids_a != ids_b:
            _fail(409, "item_mismatch", "sessions cover different item sets")
        labels_a = [sa.answers[i]["label"] for i in ids_a]
        labels_b = [sb.answers[i]["label"] for i in ids_b]
        try:
            result = game.agreement(labels_a, labels_b)
        except AlignmentError as exc:  # pragma: no cover - guarded above
            _fail(409, "alignment", str(exc))
        return {
            "session_a": a,
            "session_b": b,
            "n_items": len(ids_a),
            "p_o": result.p_o,
            "p_e": result.p_e,
            "kappa": result.kappa,
            "degenerate": result.degenerate,
        }

    return app
