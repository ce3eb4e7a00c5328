"""External-LLM integration: chat relay, key-concept tag extraction with an
offline lexicon fallback, orthographic multi-view segment rendering, and the
instruction-data generation pipeline."""

from __future__ import annotations

import json
import logging
import os
import re
from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw

from .errors import (BadParam, BadResponse, IoError, ServiceUnavailable,
                     Timeout)

log = logging.getLogger("flowquery.llmbridge")

ROLES = ("user", "assistant", "system")

# Flow-pattern phrases recognized offline; longest match wins.
LEXICON = (
    "laminar flow", "jet stream", "circulation", "turbulence", "advection",
    "vortex", "saddle", "spiral", "shear", "eddy",
)


@dataclass
class ChatTurn:
    role: str
    text: str
    attached_tags: list = dc_field(default_factory=list)

    def __post_init__(self):
        if self.role not in ROLES:
            raise BadParam(f"unknown role {self.role!r}")
        if self.role in ("user", "assistant") and not self.text:
            raise BadParam("user/assistant turns need non-empty text")


@dataclass
class TagConcept:
    name: str
    source_turn: int
    query_text: str


@dataclass
class InstructionSample:
    template_id: str
    views: list
    instruction: str
    response: str
    segment_refs: list


@dataclass
class ChatClientConfig:
    endpoint: str = ""
    model: str = "default"
    timeout: float = 30.0
    api_key_env: str = "FLOWQUERY_API_KEY"
    context_budget: int = 16000  # total characters of turn text kept


def trim_history(history, budget: int):
    """Drop oldest non-system turns until the total text fits the budget."""
    kept = list(history)
    total = sum(len(t.text) for t in kept)
    while total > budget:
        for i, t in enumerate(kept):
            if t.role != "system":
                total -= len(t.text)
                del kept[i]
                break
        else:
            break
    return kept


def chat(history, config: ChatClientConfig) -> ChatTurn:
    """Relay a conversation to a chat-completions endpoint and return the
    assistant's turn; the input history is never mutated."""
    import requests

    if not config.endpoint:
        raise ServiceUnavailable(
            "no chat endpoint configured; set one in the service config "
            "(chat_endpoint) to enable conversations")
    msgs = [{"role": t.role, "content": t.text}
            for t in trim_history(history, config.context_budget)]
    headers = {}
    key = os.environ.get(config.api_key_env, "")
    if key:
        headers["Authorization"] = f"Bearer {key}"
    payload = {"model": config.model, "messages": msgs}
    log.debug("chat request: %s", json.dumps(payload)[:500])
    try:
        resp = requests.post(config.endpoint, json=payload, headers=headers,
                             timeout=config.timeout)
    except requests.Timeout as e:
        raise Timeout(f"chat endpoint timed out: {e}") from e
    except requests.RequestException as e:
        raise ServiceUnavailable(f"chat endpoint unreachable: {e}") from e
    if resp.status_code != 200:
        raise BadResponse(f"chat endpoint returned {resp.status_code}")
    try:
        content = resp.json()["choices"][0]["message"]["content"]
    except Exception as e:
        raise BadResponse(f"malformed chat payload: {e}") from e
    if not isinstance(content, str) or not content:
        raise BadResponse("chat endpoint returned empty content")
    log.debug("chat response: %s", content[:500])
    return ChatTurn(role="assistant", text=content)


_EXTRACT_PROMPT = (
    "Extract the flow-pattern key concepts from the following text. "
    "Reply with a comma-separated list of short phrases only.\n\n")


def extract_tags(turn: ChatTurn, mode: str = "lexicon",
                 config: ChatClientConfig | None = None,
                 turn_index: int = 0) -> list[TagConcept]:
    """Key concepts from one assistant turn, in order of first appearance.

    lexicon mode scans the shipped phrase list longest-first; llm mode asks
    the configured endpoint with a fixed extraction instruction."""
    if turn.role != "assistant":
        raise BadParam("tags are extracted from assistant turns")
    names = []
    if mode == "lexicon":
        found = []
        for phrase in sorted(LEXICON, key=len, reverse=True):
            m = re.search(rf"\b{re.escape(phrase)}\b", turn.text, re.IGNORECASE)
            if m:
                found.append((m.start(), phrase))
        names = [p for _, p in sorted(found)]
    elif mode == "llm":
        reply = chat([ChatTurn("user", _EXTRACT_PROMPT + turn.text)],
                     config or ChatClientConfig())
        for part in re.split(r"[,\n;]", reply.text):
            name = part.strip().strip(".").lower()
            if name and len(name.split()) <= 5:
                names.append(name)
    else:
        raise BadParam(f"unknown tag extraction mode {mode!r}")
    seen = set()
    tags = []
    for name in names:
        if name.lower() not in seen:
            seen.add(name.lower())
            tags.append(TagConcept(name=name, source_turn=turn_index,
                                   query_text=name))
    return tags


def merge_tags(existing, new) -> list[TagConcept]:
    """Case-insensitive set union keyed by name; idempotent and order-stable."""
    merged = list(existing)
    have = {t.name.lower() for t in merged}
    for t in new:
        if t.name.lower() not in have:
            have.add(t.name.lower())
            merged.append(t)
    return merged


# multi-view rendering -------------------------------------------------------

def render_views(points, n_views: int = 3, size: int = 256):
    """Orthographic line renders of a polyline from evenly spaced azimuths.

    The bounding box is centered, so the images are invariant to
    translating the input.  Returns PIL images; 4x supersampling gives
    anti-aliased strokes deterministically."""
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    if n_views < 1:
        raise BadParam("n_views must be >= 1")
    images = []
    for v in range(n_views):
        theta = 2.0 * np.pi * v / n_views
        right = np.array([-np.sin(theta), np.cos(theta), 0.0])
        up = np.array([0.0, 0.0, 1.0])
        xy = np.stack([pts @ right, pts @ up], axis=1)
        xy -= 0.5 * (xy.min(axis=0) + xy.max(axis=0))
        extent = max(float(np.abs(xy).max()) * 2.0, 1e-12)
        ss = 4
        big = size * ss
        scale = 0.85 * big / extent
        pix = xy * scale
        pix[:, 1] *= -1.0
        pix += big / 2.0
        img = Image.new("L", (big, big), color=255)
        draw = ImageDraw.Draw(img)
        draw.line([tuple(p) for p in pix], fill=0, width=ss * 2)
        images.append(img.resize((size, size), Image.LANCZOS))
    return images


def save_views(images, out_dir, stem: str) -> list[str]:
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        paths = []
        for i, img in enumerate(images):
            p = out_dir / f"{stem}_view{i}.png"
            img.save(p)
            paths.append(str(p))
        return paths
    except OSError as e:
        raise IoError(str(e)) from e


# instruction data -----------------------------------------------------------

DEFAULT_TEMPLATES = (
    {"id": "desc-shape", "kind": "description",
     "text": "Describe the shape of the streamline segment shown in the "
             "attached views."},
    {"id": "desc-geometry", "kind": "description",
     "text": "What geometric pattern does this streamline segment form? "
             "Focus on curvature and symmetry."},
    {"id": "reason-dynamics", "kind": "reasoning",
     "text": "What flow dynamics could produce the pattern shown in the "
             "attached views? Explain the likely mechanism."},
    {"id": "reason-context", "kind": "reasoning",
     "text": "Given the attached streamline views, what larger flow "
             "structure might this segment belong to, and why?"},
)


def gen_instruction_data(segments, templates=DEFAULT_TEMPLATES,
                         config: ChatClientConfig | None = None,
                         n_views: int = 3, size: int = 256, seed: int = 0,
                         dry_run: bool = False, out_dir=None, jsonl_path=None):
    """Per segment: render views, pick a template uniformly at random
    (seeded), optionally call the chat endpoint, and package the sample.

    Chat failures are counted and skipped rather than aborting the batch.
    Returns (samples, failure_count)."""
    if not dry_run and (config is None or not config.endpoint):
        raise ServiceUnavailable("instruction generation needs a chat "
                                 "endpoint unless dry_run is set")
    rng = np.random.default_rng(seed)
    samples = []
    failures = 0
    for i, seg in enumerate(segments):
        pts = seg.points if hasattr(seg, "points") else np.asarray(seg)
        tpl = templates[int(rng.integers(len(templates)))]
        views = render_views(pts, n_views=n_views, size=size)
        paths = save_views(views, out_dir, f"seg{i:05d}") if out_dir else []
        instruction = tpl["text"]
        response = ""
        if not dry_run:
            prompt = (f"{instruction}\n\nViews: "
                      + (", ".join(paths) if paths else f"{n_views} renders"))
            try:
                response = chat([ChatTurn("user", prompt)], config).text
            except (ServiceUnavailable, Timeout, BadResponse) as e:
                log.warning("sample %d failed: %s", i, e)
                failures += 1
                continue
        samples.append(InstructionSample(
            template_id=tpl["id"], views=paths, instruction=instruction,
            response=response, segment_refs=[i]))
    if jsonl_path:
        try:
            with open(jsonl_path, "w") as fh:
                for s in samples:
                    fh.write(json.dumps({
                        "template_id": s.template_id, "views": s.views,
                        "instruction": s.instruction, "response": s.response,
                        "segment_refs": s.segment_refs}, sort_keys=True) + "\n")
        except OSError as e:
            raise IoError(str(e)) from e
    return samples, failures


def review_sample(samples, fraction: float = 0.2, seed: int = 0):
    """Deterministic subset for manual spot checks of generated responses."""
    if not 0 < fraction <= 1:
        raise BadParam("fraction must be in (0, 1]")
    rng = np.random.default_rng(seed)
    count = max(1, int(round(fraction * len(samples))))
    idx = sorted(rng.choice(len(samples), size=count, replace=False))
    return [samples[i] for i in idx]
