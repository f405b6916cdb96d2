// Pure event-log reducer: all UI state derives from applying events in seq
// order. Applying an already-seen seq is a no-op, so redelivery after an
// SSE reconnect cannot corrupt the view.

import type { Message, ObjectCard, ProfileData, SessionEvent, UtterancePayload } from "./types.js";

export interface UiState {
  lastSeq: number;
  phase: string;
  messages: Message[];
  objects: ObjectCard[];
  profile: ProfileData | null;
  profileDegraded: boolean;
  awaitingUser: boolean;
  userName: string;
  personaNames: string[];
  warningCount: number;
  sceneDescription: string | null;
}

export function initialState(): UiState {
  return {
    lastSeq: 0,
    phase: "Init",
    messages: [],
    objects: [],
    profile: null,
    profileDegraded: false,
    awaitingUser: false,
    userName: "Learner",
    personaNames: [],
    warningCount: 0,
    sceneDescription: null,
  };
}

function speakerName(state: UiState, speaker: string): string {
  if (speaker === "user") return state.userName;
  if (speaker === "system") return "System";
  return speaker.slice("agent:".length);
}

export function applyEvent(state: UiState, ev: SessionEvent): UiState {
  if (ev.seq <= state.lastSeq) return state; // idempotent redelivery
  const next: UiState = { ...state, lastSeq: ev.seq };
  switch (ev.type) {
    case "session_created": {
      const config = ev.payload.config ?? {};
      next.userName = config.fallback_user_name ?? next.userName;
      next.personaNames = (config.personas ?? []).map((p: { name: string }) => p.name);
      break;
    }
    case "phase_changed": {
      next.phase = ev.payload.to;
      next.awaitingUser = false;
      const scene = ev.payload.scene;
      if (scene) next.sceneDescription = scene.description ?? null;
      break;
    }
    case "user_utterance":
    case "agent_utterance": {
      const utt = ev.payload as UtterancePayload;
      next.messages = [
        ...state.messages,
        {
          useq: utt.seq,
          speaker: utt.speaker,
          name: speakerName(state, utt.speaker),
          text: utt.text,
          realia: (utt.annotations ?? []).includes("realia_intro"),
          phase: utt.phase,
        },
      ];
      if (ev.type === "user_utterance") {
        next.awaitingUser = false;
      } else {
        // In the warm-up the assessor's question hands the turn to the user;
        // a terminal question is followed by phase_changed, which resets it.
        next.awaitingUser = utt.phase === "GettingToKnowYou" && utt.speaker !== "user";
      }
      break;
    }
    case "supervisor_decision": {
      next.awaitingUser = ev.payload.next_speaker === "user";
      break;
    }
    case "object_suggested": {
      next.objects = [...state.objects, { noun: ev.payload.noun, status: "pending", assetRef: "" }];
      break;
    }
    case "object_generated": {
      next.objects = state.objects.map((card) =>
        card.noun === ev.payload.noun
          ? { ...card, status: ev.payload.status, assetRef: ev.payload.asset_ref }
          : card,
      );
      break;
    }
    case "profile_extracted": {
      next.profile = ev.payload.profile;
      next.profileDegraded = Boolean(ev.payload.degraded);
      if (ev.payload.profile?.name) next.userName = ev.payload.profile.name;
      break;
    }
    case "validation_warning": {
      next.warningCount = state.warningCount + 1;
      break;
    }
    default:
      break; // prompt_rendered, model_call, object_rejected: nothing to show
  }
  return next;
}

export function applyEvents(state: UiState, events: SessionEvent[]): UiState {
  return events.reduce(applyEvent, state);
}

/** "Name: text" lines, matching the CLI transcript rendering. */
export function transcriptLines(state: UiState): string[] {
  return state.messages.map((m) => `${m.name}: ${m.text}`);
}

export function phaseLabel(phase: string): string {
  switch (phase) {
    case "GettingToKnowYou":
      return "Getting to Know You";
    case "SceneCapture":
      return "Scene Capture";
    case "MultiParty":
      return "Group Conversation";
    case "Ended":
      return "Session Ended";
    default:
      return phase;
  }
}
