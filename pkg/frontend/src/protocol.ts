/**
 * Wire protocol: one newline-free JSON object per WebSocket text frame.
 * Mirrors the server's framing rules exactly; decoding is strict so a
 * malformed or unknown frame never half-applies.
 */

export const PROTOCOL_VERSION = 1;

export const SERVER_TYPES = new Set([
  'welcome', 'refuse', 'config', 'ping', 'present', 'prompt', 'rest',
  'phase', 'question', 'done', 'error',
]);
export const CLIENT_TYPES = new Set([
  'hello', 'pong', 'shown', 'response', 'frame', 'prompt_shown',
  'prompt_cleared', 'questionnaire',
]);

export interface WireMessage {
  v: number;
  type: string;
  seq: number;
  payload: Record<string, unknown>;
}

export class WireError extends Error {}

export function encodeMessage(message: WireMessage): string {
  if (!SERVER_TYPES.has(message.type) && !CLIENT_TYPES.has(message.type)) {
    throw new WireError(`unknown message type ${message.type}`);
  }
  const text = JSON.stringify(message);
  if (text.includes('\n')) {
    throw new WireError('encoded frame must be newline-free');
  }
  return text;
}

export function decodeMessage(frame: string): WireMessage {
  let data: unknown;
  try {
    data = JSON.parse(frame);
  } catch (err) {
    throw new WireError(`malformed frame: ${(err as Error).message}`);
  }
  if (typeof data !== 'object' || data === null || Array.isArray(data)) {
    throw new WireError('frame must decode to an object');
  }
  const record = data as Record<string, unknown>;
  for (const key of ['v', 'type', 'seq', 'payload']) {
    if (!(key in record)) {
      throw new WireError(`frame missing ${key} field`);
    }
  }
  if (record.v !== PROTOCOL_VERSION) {
    throw new WireError(`unsupported protocol version ${record.v}`);
  }
  const type = record.type as string;
  if (!SERVER_TYPES.has(type) && !CLIENT_TYPES.has(type)) {
    throw new WireError(`unknown message type ${type}`);
  }
  if (typeof record.seq !== 'number' || !Number.isInteger(record.seq)) {
    throw new WireError('seq must be an integer');
  }
  if (typeof record.payload !== 'object' || record.payload === null) {
    throw new WireError('payload must be an object');
  }
  return {
    v: PROTOCOL_VERSION,
    type,
    seq: record.seq,
    payload: record.payload as Record<string, unknown>,
  };
}

// --- trial payloads -------------------------------------------------------

export interface ChangePayload {
  direction: 'increase' | 'decrease';
  magnitude: number;
  ramp: [number, number, number];
}

export interface StimulusPayload {
  modality: 'visual' | 'auditory' | 'tactile';
  param: string;
  shape: string;
  intensity: number;
  duration_ms: number;
  change?: ChangePayload;
}

export interface TimingPayload {
  onsets_ms: number[];
  offsets_ms: number[];
  response_open_ms: number;
  response_close_ms: number;
  iti_ms: number;
  warning_onset_ms?: number;
  change_window_ms?: [number, number];
}

export interface TrialPayload {
  task: string;
  stimuli: StimulusPayload[];
  label: Record<string, unknown>;
  timing: TimingPayload;
  block_index: number;
  trial_index: number;
}

export interface PresentPayload {
  phase_index: number;
  block_index: number;
  trial_index: number;
  trial: TrialPayload;
}

export interface PromptPayload {
  action: string;
  text: string;
  buttons: string[];
  display_ms: number;
  post_gap_ms: number;
}

export type ButtonId = 'X' | 'R2' | 'L2';

/** Full trial footprint in ms: response close or last offset, plus ITI. */
export function slotMs(timing: TimingPayload): number {
  const tail = Math.max(timing.response_close_ms, ...timing.offsets_ms);
  return tail + timing.iti_ms;
}
