"""Hint decks: a level's hint list file, rendered either as a static
sequential-slideshow HTML page or served through the reveal-gated JSON API.

Hint bodies use a restricted markup subset -- paragraphs, `inline code`,
fenced code blocks, and [links](url).  Raw HTML is rejected at parse time
so community-contributed decks cannot inject script into the player's
browser.  Reveals are tracked server-side per (project, level) and only
ever advance by one.
"""

from __future__ import annotations

import html
import re
from dataclasses import dataclass

import yaml

from . import errors
from .core import Emulator

_RAW_HTML_RE = re.compile(r"<\s*[A-Za-z/!]")
_INLINE_CODE_RE = re.compile(r"`([^`\n]+)`")
_LINK_RE = re.compile(r"\[([^\]\n]+)\]\(([^)\s]+)\)")


@dataclass(frozen=True)
class Hint:
    title: str
    body: str


@dataclass(frozen=True)
class HintDeck:
    level: str
    hints: tuple[Hint, ...]


def parse_hint_file(text: str, level: str = "") -> HintDeck:
    """Parse ``hints: [{title, body}, ...]``; order is authoring order."""
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise errors.HintParseError(0, f"not valid YAML: {exc}") from exc
    if not isinstance(doc, dict) or "hints" not in doc:
        raise errors.HintParseError(0, "file must contain a 'hints' list")
    raw = doc["hints"]
    if not isinstance(raw, list) or not raw:
        raise errors.HintParseError(0, "at least one hint is required")
    hints: list[Hint] = []
    for index, item in enumerate(raw):
        if not isinstance(item, dict):
            raise errors.HintParseError(index, "hint must be a mapping")
        title = str(item.get("title") or "").strip()
        body = str(item.get("body") or "").strip()
        if not title:
            raise errors.HintParseError(index, "missing title")
        if not body:
            raise errors.HintParseError(index, "missing body")
        _validate_markup(index, body)
        hints.append(Hint(title=title, body=body))
    return HintDeck(level=level or str(doc.get("level", "")), hints=tuple(hints))


def _split_fences(body: str) -> list[tuple[str, str]]:
    """Split into ("text", chunk) / ("code", chunk) segments on ``` fences."""
    segments: list[tuple[str, str]] = []
    parts = body.split("```")
    for i, part in enumerate(parts):
        if i % 2 == 0:
            if part:
                segments.append(("text", part))
        else:
            segments.append(("code", part.strip("\n")))
    if len(parts) % 2 == 0:
        raise errors.HintParseError(0, "unterminated code fence")
    return segments


def _validate_markup(index: int, body: str) -> None:
    for kind, chunk in _split_fences(body):
        if kind != "text":
            continue
        stripped = _INLINE_CODE_RE.sub("", chunk)
        if _RAW_HTML_RE.search(stripped):
            raise errors.HintParseError(index, "raw HTML is not allowed in hint bodies")


def strip_markup(body: str) -> str:
    """Plain-text view of a hint body (used by the content-fidelity tests)."""
    out: list[str] = []
    for kind, chunk in _split_fences(body):
        if kind == "code":
            out.append(chunk)
        else:
            text = _INLINE_CODE_RE.sub(lambda m: m.group(1), chunk)
            text = _LINK_RE.sub(lambda m: m.group(1), text)
            out.append(text)
    return "\n".join(part.strip() for part in out if part.strip())


def _render_inline(text: str) -> str:
    escaped = html.escape(text, quote=False)
    escaped = _INLINE_CODE_RE.sub(lambda m: f"<code>{m.group(1)}</code>", escaped)
    escaped = _LINK_RE.sub(lambda m: f'<a href="{m.group(2)}">{m.group(1)}</a>', escaped)
    return escaped


def render_body(body: str) -> str:
    parts: list[str] = []
    for kind, chunk in _split_fences(body):
        if kind == "code":
            parts.append(f"<pre><code>{html.escape(chunk, quote=False)}</code></pre>")
        else:
            for para in re.split(r"\n\s*\n", chunk):
                para = para.strip()
                if para:
                    parts.append(f"<p>{_render_inline(para)}</p>")
    return "\n".join(parts)


_SLIDESHOW_STYLE = """\
body { font-family: system-ui, sans-serif; margin: 2rem auto; max-width: 46rem; }
.slide { display: none; border: 1px solid #ccd; border-radius: 8px; padding: 1rem 1.5rem; }
.slide.active { display: block; }
pre { background: #f4f4f8; padding: .75rem; overflow-x: auto; }
code { background: #f4f4f8; padding: 0 .2rem; }
nav { margin-top: 1rem; display: flex; gap: .5rem; align-items: center; }
"""

_SLIDESHOW_SCRIPT = """\
var current = 0;
var slides = document.querySelectorAll('.slide');
function show(i) {
  current = Math.max(0, Math.min(slides.length - 1, i));
  slides.forEach(function (s, j) { s.classList.toggle('active', j === current); });
  document.getElementById('pos').textContent = (current + 1) + ' / ' + slides.length;
}
document.getElementById('prev').addEventListener('click', function () { show(current - 1); });
document.getElementById('next').addEventListener('click', function () { show(current + 1); });
show(0);
"""


def render_slideshow(deck: HintDeck) -> str:
    """One self-contained HTML document; N slides for N hints, navigable
    only next/previous.  Byte-identical output for identical decks."""
    slides = []
    for i, hint in enumerate(deck.hints, start=1):
        slides.append(
            f'<section class="slide" id="hint-{i}">\n'
            f"<h2>{html.escape(hint.title, quote=False)}</h2>\n"
            f"{render_body(hint.body)}\n"
            f"</section>"
        )
    title = html.escape(deck.level or "hints", quote=False)
    body = "\n".join(slides)
    return (
        "<!DOCTYPE html>\n"
        '<html lang="en">\n<head>\n<meta charset="utf-8">\n'
        f"<title>Hints: {title}</title>\n"
        f"<style>\n{_SLIDESHOW_STYLE}</style>\n"
        "</head>\n<body>\n"
        f"<h1>Hints: {title}</h1>\n"
        f"{body}\n"
        '<nav><button id="prev">&#8592; previous</button>'
        '<span id="pos"></span>'
        '<button id="next">next &#8594;</button></nav>\n'
        f"<script>\n{_SLIDESHOW_SCRIPT}</script>\n"
        "</body>\n</html>\n"
    )


# ---------------------------------------------------------------------------
# Reveal-gated access
# ---------------------------------------------------------------------------

def revealed_hints(emu: Emulator, deck: HintDeck, ref: str, project_id: str) -> dict:
    with emu.locked():
        count = emu.progress_for(project_id)["hints"].get(ref, 0)
    return _view(deck, ref, count)


def reveal_next(emu: Emulator, deck: HintDeck, ref: str, project_id: str) -> dict:
    """Advance the per-(project, level) counter by exactly one."""
    with emu.locked():
        ledger = emu.progress_for(project_id)["hints"]
        count = ledger.get(ref, 0)
        if count >= len(deck.hints):
            raise errors.AlreadyAtEnd(f"all {len(deck.hints)} hints already revealed")
        ledger[ref] = count + 1
        count += 1
    return _view(deck, ref, count)


def _view(deck: HintDeck, ref: str, count: int) -> dict:
    return {
        "level": ref,
        "total": len(deck.hints),
        "revealed": count,
        "hints": [
            {"index": i + 1, "title": h.title, "body": h.body}
            for i, h in enumerate(deck.hints[:count])
        ],
    }
