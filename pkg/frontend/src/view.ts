// Pure rendering: state in, HTML out. The DOM layer just assigns innerHTML,
// which keeps every visual decision testable without a browser.

import { ConsoleState } from "./state.js";

function escapeHtml(text: string): string {
  return text.replace(/&/g, "&amp;").replace(/</g, "&lt;").replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;");
}

export function renderMatches(state: ConsoleState): string {
  if (state.matches.length === 0) {
    return `<p class="empty">No results yet. Type a prompt and submit.</p>`;
  }
  const items = state.matches.map((m) => {
    const cls = state.selected && state.selected.object_id === m.object_id
      && state.selected.granularity === m.granularity ? ` class="selected"` : "";
    return `<li${cls} data-object="${m.object_id}" data-granularity="${m.granularity}">` +
      `object ${m.object_id} <span class="level">[${m.granularity}]</span> ` +
      `<span class="score">${m.score.toFixed(4)}</span></li>`;
  });
  return `<ol class="matches">${items.join("")}</ol>`;
}

export function renderViewport(state: ConsoleState): string {
  if (!state.renderUrl) {
    return `<p class="empty">No render.</p>`;
  }
  const caption = state.selected
    ? `object ${state.selected.object_id} highlighted`
    : "full scene";
  return `<img id="viewport-image" src="${state.renderUrl}" alt="${caption}">` +
    `<p class="caption">${caption} — camera ${state.cameraIndex}, t=${state.time.toFixed(2)}</p>`;
}

export function renderHistory(state: ConsoleState): string {
  if (state.history.length === 0) {
    return "";
  }
  const rows = state.history.map((h, i) => {
    const top = h.matches[0];
    const hit = top ? `object ${top.object_id} (${top.score.toFixed(3)})` : "no match";
    return `<li>#${i + 1} "${escapeHtml(h.prompt)}" @${h.granularity}: ${hit}</li>`;
  });
  return `<ul class="history">${rows.join("")}</ul>`;
}

export function renderStatus(state: ConsoleState): string {
  const parts: string[] = [];
  if (state.busy) parts.push(`<span class="busy">querying…</span>`);
  if (state.error) parts.push(`<span class="error">${escapeHtml(state.error)}</span>`);
  if (state.notice) parts.push(`<span class="notice">${escapeHtml(state.notice)}</span>`);
  return parts.join(" ");
}

export function renderScenePanel(state: ConsoleState): string {
  if (!state.scene) {
    return `<p class="empty">Connecting…</p>`;
  }
  const counts = state.scene.granularities
    .map((g) => `${g}: ${(state.scene!.objects[g] ?? []).length}`)
    .join(", ");
  const dyn = state.scene.dynamic ? "dynamic scene" : "static scene";
  return `<p>${dyn}; objects ${counts}; ${state.scene.cameras.length} cameras</p>`;
}
