// Bootstrap: create or join a session, subscribe to its event stream, and
// keep pulling agent turns while auto-advance is on. All conversation text
// comes from the event log; the composer is the only input.

import { SessionApi, ApiError } from "./api.js";
import { applyEvent, initialState, type UiState } from "./state.js";
import { subscribeEvents, type StreamHandle } from "./stream.js";
import { render, setConnection, type ViewElements } from "./ui.js";

function el<T extends HTMLElement>(id: string): T {
  const found = document.getElementById(id);
  if (!found) throw new Error(`missing element #${id}`);
  return found as T;
}

const api = new SessionApi("");
let state: UiState = initialState();
let sessionId: string | null = null;
let stream: StreamHandle | null = null;
let advancing = false;

const els: ViewElements = {
  phaseBanner: el("phase-banner"),
  messageList: el("message-list"),
  composerInput: el<HTMLInputElement>("composer-input"),
  composerButton: el<HTMLButtonElement>("composer-send"),
  composerHint: el("composer-hint"),
  objectRail: el("object-rail"),
  profilePanel: el("profile-panel"),
  sceneForm: el("scene-form"),
  connectionBanner: el("connection-banner"),
};
const autoAdvance = el<HTMLInputElement>("auto-advance");
const setupPanel = el("setup-panel");
const sessionPanel = el("session-panel");

function onEvent(event: Parameters<typeof applyEvent>[1]): void {
  state = applyEvent(state, event);
  render(state, els);
  queueAdvance();
}

async function queueAdvance(): Promise<void> {
  if (!sessionId || advancing || !autoAdvance.checked) return;
  if (state.awaitingUser || state.phase === "Ended" || state.phase === "SceneCapture") return;
  advancing = true;
  try {
    const result = await api.advance(sessionId);
    // events arrive via the stream; stop pulling once the user owns the turn
    if (!result.awaiting_user && result.events.length > 0) {
      setTimeout(() => {
        advancing = false;
        queueAdvance();
      }, 150);
      return;
    }
  } catch (error) {
    if (!(error instanceof ApiError && error.status === 409)) console.error(error);
  }
  advancing = false;
}

async function startSession(): Promise<void> {
  const configText = el<HTMLTextAreaElement>("config-input").value.trim();
  let config: Record<string, unknown> | undefined;
  if (configText) {
    try {
      config = JSON.parse(configText);
    } catch (error) {
      el("setup-error").textContent = `Bad config JSON: ${error}`;
      return;
    }
  }
  try {
    const created = await api.createSession(config);
    joinSession(created.session_id);
  } catch (error) {
    el("setup-error").textContent = String(error);
  }
}

function joinSession(id: string): void {
  sessionId = id;
  state = initialState();
  stream?.close();
  els.messageList.replaceChildren(); // messages render incrementally
  setupPanel.hidden = true;
  sessionPanel.hidden = false;
  el("session-id-label").textContent = id;
  stream = subscribeEvents(id, onEvent, {
    fromSeq: 0,
    onStatus: (connected) => setConnection(els, connected),
  });
  queueAdvance();
}

async function sendReply(): Promise<void> {
  if (!sessionId) return;
  const text = els.composerInput.value.trim();
  if (!text) return;
  try {
    await api.postUtterance(sessionId, text);
    els.composerInput.value = "";
    queueAdvance();
  } catch (error) {
    if (error instanceof ApiError && error.status === 409) {
      els.composerHint.textContent = "Not your turn yet.";
    } else {
      els.composerHint.textContent = String(error);
    }
  }
}

async function sendScene(): Promise<void> {
  if (!sessionId) return;
  const description = el<HTMLInputElement>("scene-description").value.trim();
  const objects = el<HTMLInputElement>("scene-objects")
    .value.split(",")
    .map((s) => s.trim())
    .filter(Boolean);
  if (!description) return;
  try {
    await api.ingestScene(sessionId, objects, description);
    queueAdvance();
  } catch (error) {
    console.error(error);
  }
}

el("create-session").addEventListener("click", () => void startSession());
el("join-session").addEventListener("click", () => {
  const id = el<HTMLInputElement>("join-id").value.trim();
  if (id) joinSession(id);
});
els.composerButton.addEventListener("click", () => void sendReply());
els.composerInput.addEventListener("keydown", (ev) => {
  if (ev.key === "Enter") void sendReply();
});
el("scene-send").addEventListener("click", () => void sendScene());
autoAdvance.addEventListener("change", () => void queueAdvance());

render(state, els);
