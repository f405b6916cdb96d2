// Wire types mirroring the session service's JSONL event log and snapshots.

export interface SessionEvent {
  seq: number;
  ts_ms: number;
  type: string;
  payload: Record<string, any>;
}

export interface UtterancePayload {
  seq: number;
  speaker: string; // "user" | "system" | "agent:<Name>"
  text: string;
  phase: string;
  ts_ms: number;
  annotations: string[];
}

export interface Snapshot {
  session_id: string;
  phase: string;
  awaiting_user: boolean;
  history: UtterancePayload[];
  profile: ProfileData | null;
  registry: { visible: string[]; used: string[]; records: Record<string, any> };
  event_count: number;
}

export interface ProfileData {
  name: string;
  hobby: string;
  level: string;
  summary: string;
}

export interface Message {
  useq: number;
  speaker: string;
  name: string;
  text: string;
  realia: boolean;
  phase: string;
}

export type ObjectStatus = "pending" | "ready" | "failed";

export interface ObjectCard {
  noun: string;
  status: ObjectStatus;
  assetRef: string;
}
