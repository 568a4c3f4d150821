import { ChildProcess, spawn } from "node:child_process";
import * as path from "node:path";

import { afterEach, describe, expect, it } from "vitest";

import { datum, item, tempCheckpointDir, waitForExit } from "./helpers";

const MAIN = path.resolve(__dirname, "..", "dist", "main.js");

function startHttpWorker(): Promise<{ proc: ChildProcess; port: number }> {
  return new Promise((resolve, reject) => {
    const proc = spawn(
      "node",
      [MAIN, "--http", "0", "--checkpoint-dir", tempCheckpointDir()],
      { stdio: ["ignore", "pipe", "inherit"] },
    );
    const timer = setTimeout(() => reject(new Error("worker never became ready")), 5000);
    let buffer = "";
    proc.stdout!.on("data", (chunk: Buffer) => {
      buffer += chunk.toString("utf-8");
      const idx = buffer.indexOf("\n");
      if (idx >= 0) {
        clearTimeout(timer);
        const ready = JSON.parse(buffer.slice(0, idx));
        resolve({ proc, port: ready.port });
      }
    });
  });
}

async function post(port: number, body: unknown): Promise<any> {
  const response = await fetch(`http://127.0.0.1:${port}/`, {
    method: "POST",
    headers: { "Content-Type": "application/json" },
    body: JSON.stringify(body),
  });
  return response.json();
}

describe("http worker", () => {
  let proc: ChildProcess | null = null;

  afterEach(() => {
    if (proc && proc.exitCode === null) proc.kill();
    proc = null;
  });

  it("serves the same bodies over HTTP POST", async () => {
    const worker = await startHttpWorker();
    proc = worker.proc;

    const train = await post(worker.port, {
      op: "train",
      checkpoint: null,
      datums: [datum("q1", "a1")],
      hyperparams: {},
    });
    expect(train.ok).toBe(true);

    const evaluate = await post(worker.port, {
      op: "evaluate",
      checkpoint: train.checkpoint,
      items: [item("i1", "q1"), item("i2", "other")],
    });
    expect(evaluate.predictions).toEqual([
      { item_id: "i1", predicted_answer: "a1" },
      { item_id: "i2", predicted_answer: "" },
    ]);

    const bad = await post(worker.port, { op: "nope" });
    expect(bad).toMatchObject({ ok: false, error: "bad-request" });

    const shutdown = await post(worker.port, { op: "shutdown" });
    expect(shutdown).toEqual({ ok: true });
    expect(await waitForExit(worker.proc)).toBe(0);
  });
});
