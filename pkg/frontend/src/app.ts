// Browser glue: webcam preview with the circular capture overlay, shot
// counter, and the enrollment / login flows against the HTTP service.

import { Frame, overlayRect, CANONICAL_WIDTH, CANONICAL_HEIGHT } from "./frame";
import {
  CaptureSession,
  SessionMode,
  newSession,
  captureFrame,
  remainingShots,
  canSubmit,
  submit,
  retryLogin,
} from "./session";
import { ApiClient } from "./client";

const FALLBACK_PROMPT =
  "Too many failed attempts. Sign in with your password instead, then reset your trinket.";

interface AppElements {
  video: HTMLVideoElement;
  overlay: HTMLCanvasElement;
  preview: HTMLCanvasElement;
  userId: HTMLInputElement;
  captureBtn: HTMLButtonElement;
  submitBtn: HTMLButtonElement;
  enrollBtn: HTMLButtonElement;
  loginBtn: HTMLButtonElement;
  status: HTMLElement;
  feedback: HTMLElement;
}

function getElements(): AppElements {
  const byId = <T extends HTMLElement>(id: string): T => {
    const el = document.getElementById(id);
    if (!el) throw new Error(`missing element #${id}`);
    return el as T;
  };
  return {
    video: byId("video"),
    overlay: byId("overlay"),
    preview: byId("preview"),
    userId: byId("user-id"),
    captureBtn: byId("capture"),
    submitBtn: byId("submit"),
    enrollBtn: byId("mode-enroll"),
    loginBtn: byId("mode-login"),
    status: byId("status"),
    feedback: byId("feedback"),
  };
}

function grabFrame(video: HTMLVideoElement): Frame {
  const canvas = document.createElement("canvas");
  canvas.width = video.videoWidth;
  canvas.height = video.videoHeight;
  const ctx = canvas.getContext("2d");
  if (!ctx) throw new Error("2d context unavailable");
  ctx.drawImage(video, 0, 0);
  const image = ctx.getImageData(0, 0, canvas.width, canvas.height);
  return { width: image.width, height: image.height, data: image.data };
}

function drawOverlay(canvas: HTMLCanvasElement, width: number, height: number): void {
  canvas.width = width;
  canvas.height = height;
  const ctx = canvas.getContext("2d");
  if (!ctx) return;
  const rect = overlayRect(width, height);
  ctx.clearRect(0, 0, width, height);
  ctx.strokeStyle = "#00d084";
  ctx.lineWidth = 3;
  ctx.beginPath();
  ctx.arc(rect.x + rect.side / 2, rect.y + rect.side / 2, rect.side / 2, 0, 2 * Math.PI);
  ctx.stroke();
}

function drawPreview(canvas: HTMLCanvasElement, frame: Frame): void {
  canvas.width = frame.width;
  canvas.height = frame.height;
  const ctx = canvas.getContext("2d");
  if (!ctx) return;
  const pixels = new Uint8ClampedArray(frame.data); // fresh ArrayBuffer for ImageData
  ctx.putImageData(new ImageData(pixels, frame.width, frame.height), 0, 0);
}

function render(session: CaptureSession, els: AppElements): void {
  const remaining = remainingShots(session);
  switch (session.phase) {
    case "capturing":
      els.status.textContent =
        session.mode === "enroll"
          ? `Enrollment: ${remaining} photo${remaining === 1 ? "" : "s"} remaining`
          : remaining > 0
            ? "Login: capture one photo of your trinket"
            : "Login: photo ready";
      break;
    case "submitting":
      els.status.textContent = "Checking…";
      break;
    case "accepted":
      els.status.textContent = session.mode === "enroll" ? "Trinket enrolled." : "Accepted. Welcome back!";
      break;
    case "rejected":
      els.status.textContent = "Not recognized. Try again.";
      break;
    case "fallback":
      els.status.textContent = FALLBACK_PROMPT;
      break;
    case "error":
      els.status.textContent = "Service unavailable. Try again later.";
      break;
  }
  // server feedback rendered verbatim, one line per reason
  els.feedback.textContent = session.feedback.map((f) => f.message).join("\n");
  els.captureBtn.disabled = session.phase !== "capturing" || remaining === 0;
  els.submitBtn.disabled = !canSubmit(session);
  const latest = session.shots[session.shots.length - 1];
  if (latest) drawPreview(els.preview, latest);
}

export async function startApp(baseUrl: string): Promise<void> {
  const els = getElements();
  const client = new ApiClient(baseUrl);
  let session = newSession("enroll", "");

  const stream = await navigator.mediaDevices.getUserMedia({
    video: { width: { ideal: 2 * CANONICAL_WIDTH }, height: { ideal: 2 * CANONICAL_HEIGHT } },
  });
  els.video.srcObject = stream;
  await els.video.play();
  drawOverlay(els.overlay, els.video.videoWidth, els.video.videoHeight);

  const setMode = (mode: SessionMode): void => {
    session = newSession(mode, els.userId.value.trim());
    render(session, els);
  };
  els.enrollBtn.addEventListener("click", () => setMode("enroll"));
  els.loginBtn.addEventListener("click", () => setMode("login"));

  els.captureBtn.addEventListener("click", () => {
    session = captureFrame(session, grabFrame(els.video));
    render(session, els);
  });

  els.submitBtn.addEventListener("click", async () => {
    session = { ...session, userId: els.userId.value.trim() };
    render({ ...session, phase: "submitting" }, els);
    session = await submit(session, client);
    render(session, els);
  });

  els.preview.addEventListener("click", () => {
    session = retryLogin(session);
    render(session, els);
  });

  render(session, els);
}
