import { ServiceClient } from "./api.js";
import { ConsoleState, QueryConsole } from "./state.js";
import { renderHistory, renderMatches, renderScenePanel, renderStatus,
         renderViewport } from "./view.js";

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

function sync(state: ConsoleState): void {
  el("scene-panel").innerHTML = renderScenePanel(state);
  el("match-panel").innerHTML = renderMatches(state);
  el("viewport").innerHTML = renderViewport(state);
  el("history-panel").innerHTML = renderHistory(state);
  el("status").innerHTML = renderStatus(state);
  const cameraInput = el<HTMLInputElement>("camera-input");
  cameraInput.max = String(Math.max((state.scene?.cameras.length ?? 1) - 1, 0));
  el<HTMLInputElement>("submit-button").toggleAttribute("disabled", state.busy);
  const timeRow = el("time-row");
  timeRow.style.display = state.scene?.dynamic ? "" : "none";
}

function start(): void {
  const client = new ServiceClient("");
  const console_ = new QueryConsole(client, sync);

  const promptInput = el<HTMLInputElement>("prompt-input");
  const granularitySelect = el<HTMLSelectElement>("granularity-select");
  const cameraInput = el<HTMLInputElement>("camera-input");
  const timeInput = el<HTMLInputElement>("time-input");

  el("query-form").addEventListener("submit", (event) => {
    event.preventDefault();
    console_.setGranularity(granularitySelect.value);
    void console_.submitQuery(promptInput.value);
  });
  granularitySelect.addEventListener("change", () => {
    console_.setGranularity(granularitySelect.value);
  });
  const scrub = () => console_.scrub(Number(cameraInput.value), Number(timeInput.value));
  cameraInput.addEventListener("input", scrub);
  timeInput.addEventListener("input", scrub);
  el("match-panel").addEventListener("click", (event) => {
    const item = (event.target as HTMLElement).closest("li[data-object]");
    if (!item) return;
    const oid = Number(item.getAttribute("data-object"));
    const gran = item.getAttribute("data-granularity") ?? "S";
    const match = console_.state.matches.find(
      (m) => m.object_id === oid && m.granularity === gran);
    if (match) console_.select(match);
  });

  void console_.load();
}

document.addEventListener("DOMContentLoaded", start);
