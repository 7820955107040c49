// Capture session state machine shared by the enrollment and login flows.
//
// Enrollment collects exactly three shots before the submit button becomes
// available; extra captures are ignored. Login keeps only the latest shot.
// Server feedback messages are stored verbatim for the UI to render.

import { Frame, processCapture } from "./frame";
import { encodeFrame } from "./png";
import { ApiClient, FeedbackItem } from "./client";

export const ENROLL_SHOTS = 3;

export type SessionMode = "enroll" | "login";

export type SessionPhase =
  | "capturing"
  | "submitting"
  | "accepted"
  | "rejected"
  | "fallback"
  | "error";

export interface CaptureSession {
  mode: SessionMode;
  userId: string;
  phase: SessionPhase;
  shots: Frame[]; // processed (cropped + scaled) frames, preview == upload
  feedback: FeedbackItem[];
}

export function newSession(mode: SessionMode, userId: string): CaptureSession {
  return { mode, userId, phase: "capturing", shots: [], feedback: [] };
}

export function remainingShots(session: CaptureSession): number {
  if (session.mode === "login") return session.shots.length === 0 ? 1 : 0;
  return Math.max(0, ENROLL_SHOTS - session.shots.length);
}

export function canSubmit(session: CaptureSession): boolean {
  return session.phase === "capturing" && remainingShots(session) === 0;
}

export function captureFrame(session: CaptureSession, raw: Frame): CaptureSession {
  if (session.phase !== "capturing") return session;
  const shot = processCapture(raw);
  if (session.mode === "login") {
    return { ...session, shots: [shot] };
  }
  if (session.shots.length >= ENROLL_SHOTS) return session;
  return { ...session, shots: [...session.shots, shot] };
}

export async function submit(session: CaptureSession, client: ApiClient): Promise<CaptureSession> {
  if (!canSubmit(session)) return session;
  const inFlight: CaptureSession = { ...session, phase: "submitting" };

  if (session.mode === "enroll") {
    const result = await client.enroll(session.userId, session.shots.map(encodeFrame));
    if (result.ok) return { ...inFlight, phase: "accepted", feedback: [] };
    if (result.status === 422) {
      // rejected references: show the server's reasons and start over
      return { ...inFlight, phase: "capturing", shots: [], feedback: result.feedback };
    }
    return { ...inFlight, phase: "error" };
  }

  const result = await client.authenticate(session.userId, encodeFrame(session.shots[0]));
  if (!result.ok) return { ...inFlight, phase: "error" };
  const { verdict } = result;
  if (verdict.fallback_required) {
    return { ...inFlight, phase: "fallback", feedback: verdict.feedback };
  }
  if (verdict.accepted) return { ...inFlight, phase: "accepted", feedback: [] };
  return { ...inFlight, phase: "rejected", shots: [], feedback: verdict.feedback };
}

export function retryLogin(session: CaptureSession): CaptureSession {
  if (session.phase !== "rejected") return session;
  return { ...session, phase: "capturing", shots: [], feedback: session.feedback };
}
