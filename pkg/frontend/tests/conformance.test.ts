/**
 * End-to-end protocol conformance against a real session server.
 *
 * The server under test is the Python reference implementation, driven
 * purely through its public command line and file formats: `serve` for
 * the live session and `score` (which re-verifies every log against
 * its plan) for the conformance verdict. The fixture plan is one set
 * of two 40-display blocks with tightened timing so the whole session
 * fits in a few seconds of wall clock.
 */

import { spawn, type ChildProcessWithoutNullStreams } from "node:child_process";
import { mkdtemp, mkdir, copyFile, readFile } from "node:fs/promises";
import os from "node:os";
import path from "node:path";
import { fileURLToPath } from "node:url";
import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { runHeadlessSession, type HeadlessReport } from "../src/headless";

const HERE = path.dirname(fileURLToPath(import.meta.url));
const FIXTURES = path.join(HERE, "fixtures");

const DISPLAYS_PER_BLOCK = 40;
const BLOCKS = 2;
const PRESS_EVERY = 5; // displays 0, 5, ... 35 in each block
const PRESS_DELAY_US = 40_000;
const PRESSES = BLOCKS * (DISPLAYS_PER_BLOCK / PRESS_EVERY);

type LogEvent = { seq: number; tUs: number; kind: string; payload: Record<string, unknown> };

function parseEventLog(text: string): { header: string; events: LogEvent[] } {
  const lines = text.split("\n").filter((ln) => ln.length > 0);
  expect(lines[0]!.startsWith("osvs-log 1 ")).toBe(true);
  const events = lines.slice(1).map((ln) => {
    const m = /^(\d+) (\d+) ([A-Za-z]+) (.*)$/.exec(ln);
    expect(m, `unparseable log line: ${ln}`).toBeTruthy();
    return {
      seq: Number(m![1]),
      tUs: Number(m![2]),
      kind: m![3]!,
      payload: JSON.parse(m![4]!) as Record<string, unknown>,
    };
  });
  return { header: lines[0]!, events };
}

function runCli(args: string[], cwd: string): Promise<{ code: number; stdout: string; stderr: string }> {
  return new Promise((resolve, reject) => {
    const proc = spawn("python3", ["-m", "osvs.cli", ...args], { cwd });
    let stdout = "";
    let stderr = "";
    proc.stdout.on("data", (d: Buffer) => (stdout += d.toString()));
    proc.stderr.on("data", (d: Buffer) => (stderr += d.toString()));
    proc.on("error", reject);
    proc.on("close", (code) => resolve({ code: code ?? -1, stdout, stderr }));
  });
}

function waitForListening(proc: ChildProcessWithoutNullStreams): Promise<{ host: string; port: number; rest: Promise<string> }> {
  return new Promise((resolve, reject) => {
    let stdout = "";
    let settled = false;
    const restChunks: string[] = [];
    let restResolve!: (text: string) => void;
    const rest = new Promise<string>((r) => (restResolve = r));
    proc.stdout.on("data", (d: Buffer) => {
      const text = d.toString();
      if (settled) {
        restChunks.push(text);
        return;
      }
      stdout += text;
      const m = /listening ([\d.]+):(\d+)\n/.exec(stdout);
      if (m) {
        settled = true;
        restChunks.push(stdout.slice(stdout.indexOf("\n", stdout.indexOf("listening")) + 1));
        resolve({ host: m[1]!, port: Number(m[2]), rest });
      }
    });
    proc.stderr.on("data", () => {});
    proc.on("error", reject);
    proc.on("close", () => {
      if (!settled) reject(new Error(`server exited before listening: ${stdout}`));
      restResolve(restChunks.join(""));
    });
  });
}

describe("full-block session against the reference server", () => {
  let ws: string;
  let report: HeadlessReport;
  let serveSummary: string;
  let logText: string;

  beforeAll(async () => {
    ws = await mkdtemp(path.join(os.tmpdir(), "osvs-ui-conformance-"));
    await mkdir(path.join(ws, "plans"), { recursive: true });
    await copyFile(path.join(FIXTURES, "short.plan.txt"), path.join(ws, "plans", "p01.plan.txt"));
    await copyFile(path.join(FIXTURES, "participants.csv"), path.join(ws, "participants.csv"));

    const serve = spawn("python3", [
      "-m", "osvs.cli", "serve",
      "--workspace", ws,
      "--plan", "plans/p01.plan.txt",
      "--participant", "p01",
      "--port", "0",
      "--accept-timeout-s", "30",
    ], { cwd: ws });
    const listening = await waitForListening(serve);

    report = await runHeadlessSession(listening.host, listening.port, {
      pressAfterUs: (display) => (display % PRESS_EVERY === 0 ? PRESS_DELAY_US : null),
      readyDelayMs: 20,
      skipRestAfterMs: 300,
    });
    serveSummary = await listening.rest;
    logText = await readFile(path.join(ws, "logs", "p01.log.txt"), "utf-8");
  });

  afterAll(async () => {
    // leave the tmp workspace behind for post-mortems; the OS owns /tmp
  });

  it("completes both blocks and the server confirms every display", () => {
    expect(report.aborted).toBe(false);
    expect(report.counts.displaysShown).toBe(BLOCKS * DISPLAYS_PER_BLOCK);
    expect(report.counts.responsesSent).toBe(PRESSES);
    expect(report.counts.cues).toBe(BLOCKS);
    expect(report.counts.rests).toBe(1);
    expect(serveSummary).toContain(
      `log logs/p01.log.txt displays=${BLOCKS * DISPLAYS_PER_BLOCK} responses=${PRESSES} aborted=0`,
    );
  });

  it("re-estimates clock sync for every block with negligible drift", () => {
    expect(report.syncStates.length).toBeGreaterThanOrEqual(BLOCKS);
    expect(report.clockDriftUs).toBeLessThan(5_000);
    for (const state of report.syncStates) {
      expect(state.roundTripUs).toBeLessThan(5_000);
    }
  });

  it("never receives target identity on the wire", () => {
    expect(report.messages.length).toBeGreaterThan(0);
    for (const msg of report.messages) {
      for (const key of Object.keys(msg)) {
        expect(key).not.toMatch(/target/i);
      }
    }
    const shows = report.messages.filter((m) => m.type === "show");
    expect(shows).toHaveLength(BLOCKS * DISPLAYS_PER_BLOCK);
    // a P3 plan shows exactly three gap directions per display
    for (const show of shows) {
      expect((show as { directions: number[] }).directions).toHaveLength(3);
    }
  });

  it("writes a log whose converted response times match the client's own clock", () => {
    const { events } = parseEventLog(logText);
    const stimOns = events.filter((e) => e.kind === "StimOn");
    const responses = events.filter((e) => e.kind === "Response");
    expect(stimOns).toHaveLength(BLOCKS * DISPLAYS_PER_BLOCK);
    expect(responses).toHaveLength(PRESSES);

    // client-side ground truth: press stamp minus show arrival, per press
    const clientRts = report.shows
      .filter((s) => s.pressClientUs !== null)
      .map((s) => s.pressClientUs! - s.arrivalUs);
    expect(clientRts).toHaveLength(PRESSES);

    const onsetTimes = stimOns.map((e) => e.tUs);
    const serverRts = responses.map((r) => {
      const est = r.payload.est_t_us as number;
      expect(typeof est).toBe("number");
      const before = onsetTimes.filter((t) => t <= est);
      expect(before.length).toBeGreaterThan(0);
      return est - before[before.length - 1]!;
    });

    // loopback clock-sync budget: server-converted and client-measured
    // reaction times may disagree by at most 5 ms
    expect(serverRts).toHaveLength(clientRts.length);
    serverRts.forEach((serverRt, i) => {
      expect(Math.abs(serverRt - clientRts[i]!)).toBeLessThan(5_000);
    });
    // and the raw delays were what the script intended (40 ms plus
    // scheduling slack), so the comparison above is not vacuous
    for (const rt of serverRts) {
      expect(rt).toBeGreaterThanOrEqual(PRESS_DELAY_US - 5_000);
      expect(rt).toBeLessThan(PRESS_DELAY_US + 100_000);
    }
    for (const resp of responses) {
      expect(resp.payload.hand).toBe("R");
    }
  });

  it("passes the reference plan-conformance check via the scoring stage", async () => {
    const scored = await runCli(["score", "--workspace", ws], ws);
    expect(scored.stderr).toBe("");
    expect(scored.code).toBe(0);
    expect(scored.stdout).toContain("scored 1 participants -> scored/metrics.csv");
    const metrics = await readFile(path.join(ws, "scored", "metrics.csv"), "utf-8");
    expect(metrics.split("\n")[0]).toContain("participant");
    expect(metrics).toContain("p01");
  });

  it("kept a frame journal with measured render latency in its header", () => {
    const firstLine = report.frameLogText.split("\n")[0]!;
    expect(firstLine).toMatch(/^osvs-ui-frames 1 frames=\d+ render_latency_us=\d+$/);
    const frames = Number(/frames=(\d+)/.exec(firstLine)![1]);
    // every show and clear painted, plus cues and the rest screen
    expect(frames).toBeGreaterThanOrEqual(2 * BLOCKS * DISPLAYS_PER_BLOCK);
  });
});
