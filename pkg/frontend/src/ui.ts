// DOM rendering: the whole view is a function of the reduced UiState.

import { phaseLabel, type UiState } from "./state.js";

export interface ViewElements {
  phaseBanner: HTMLElement;
  messageList: HTMLElement;
  composerInput: HTMLInputElement;
  composerButton: HTMLButtonElement;
  composerHint: HTMLElement;
  objectRail: HTMLElement;
  profilePanel: HTMLElement;
  sceneForm: HTMLElement;
  connectionBanner: HTMLElement;
}

function personaClass(state: UiState, speaker: string): string {
  if (speaker === "user") return "msg-user";
  if (speaker === "system") return "msg-system";
  const name = speaker.slice("agent:".length);
  const idx = state.personaNames.indexOf(name);
  return idx >= 0 ? `msg-agent-${idx % 4}` : "msg-agent-0";
}

export function render(state: UiState, els: ViewElements): void {
  els.phaseBanner.textContent = phaseLabel(state.phase);
  els.phaseBanner.dataset.phase = state.phase;

  renderMessages(state, els.messageList);
  renderComposer(state, els);
  renderObjects(state, els.objectRail);
  renderProfile(state, els.profilePanel);
  els.sceneForm.hidden = !(state.phase === "SceneCapture");
}

function renderMessages(state: UiState, list: HTMLElement): void {
  // Idempotent append: message useq is unique and monotone.
  const rendered = list.children.length;
  for (const message of state.messages.slice(rendered)) {
    const row = document.createElement("div");
    row.className = `msg ${personaClass(state, message.speaker)}`;
    row.dataset.useq = String(message.useq);

    const label = document.createElement("span");
    label.className = "msg-name";
    label.textContent = message.name;
    row.appendChild(label);

    const text = document.createElement("span");
    text.className = "msg-text";
    text.textContent = message.text;
    row.appendChild(text);

    if (message.realia) {
      const badge = document.createElement("span");
      badge.className = "badge badge-realia";
      badge.textContent = "new object";
      row.appendChild(badge);
    }
    list.appendChild(row);
  }
  list.scrollTop = list.scrollHeight;
}

function renderComposer(state: UiState, els: ViewElements): void {
  const enabled = state.awaitingUser && state.phase !== "Ended";
  els.composerInput.disabled = !enabled;
  els.composerButton.disabled = !enabled;
  els.composerHint.textContent = enabled
    ? "Your turn."
    : state.phase === "Ended"
      ? "The session has ended."
      : "Waiting for the agents...";
  if (enabled) els.composerInput.focus();
}

function renderObjects(state: UiState, rail: HTMLElement): void {
  rail.replaceChildren();
  for (const card of state.objects) {
    const el = document.createElement("div");
    el.className = `object-card object-${card.status}`;
    el.dataset.noun = card.noun;

    const title = document.createElement("div");
    title.className = "object-noun";
    title.textContent = card.noun;
    el.appendChild(title);

    const status = document.createElement("span");
    status.className = `badge badge-${card.status}`;
    status.textContent = card.status;
    el.appendChild(status);

    const preview = document.createElement("div");
    preview.className = "object-preview";
    preview.textContent = card.status === "ready" && card.assetRef ? card.assetRef : "(no preview)";
    el.appendChild(preview);

    rail.appendChild(el);
  }
}

function renderProfile(state: UiState, panel: HTMLElement): void {
  panel.replaceChildren();
  if (!state.profile) {
    panel.textContent = "Profile pending...";
    return;
  }
  const rows: Array<[string, string]> = [
    ["NAME", state.profile.name],
    ["HOBBY", state.profile.hobby],
    ["LEVEL", state.profile.level],
    ["SUMMARY", state.profile.summary],
  ];
  for (const [key, value] of rows) {
    const row = document.createElement("div");
    row.className = "profile-row";
    row.textContent = `${key}: ${value}`;
    panel.appendChild(row);
  }
  if (state.profileDegraded) {
    const badge = document.createElement("span");
    badge.className = "badge badge-failed";
    badge.textContent = "degraded";
    panel.appendChild(badge);
  }
}

export function setConnection(els: ViewElements, connected: boolean): void {
  els.connectionBanner.hidden = connected;
}
