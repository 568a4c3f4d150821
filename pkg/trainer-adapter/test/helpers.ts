import { ChildProcess, spawn } from "node:child_process";
import * as fs from "node:fs";
import * as os from "node:os";
import * as path from "node:path";

const MAIN = path.resolve(__dirname, "..", "dist", "main.js");

export function tempCheckpointDir(): string {
  return fs.mkdtempSync(path.join(os.tmpdir(), "adapter-test-"));
}

/** Drives the worker over stdio, one request in flight at a time. */
export class StdioClient {
  readonly proc: ChildProcess;
  private buffer = "";
  private waiters: ((line: string) => void)[] = [];

  constructor(extraArgs: string[] = []) {
    this.proc = spawn("node", [MAIN, "--checkpoint-dir", tempCheckpointDir(), ...extraArgs], {
      stdio: ["pipe", "pipe", "inherit"],
    });
    this.proc.stdout!.on("data", (chunk: Buffer) => {
      this.buffer += chunk.toString("utf-8");
      let idx = this.buffer.indexOf("\n");
      while (idx >= 0) {
        const line = this.buffer.slice(0, idx);
        this.buffer = this.buffer.slice(idx + 1);
        const waiter = this.waiters.shift();
        if (waiter) waiter(line);
        idx = this.buffer.indexOf("\n");
      }
    });
  }

  sendLine(line: string): Promise<any> {
    return new Promise((resolve, reject) => {
      const timer = setTimeout(() => reject(new Error("timed out waiting for reply")), 5000);
      this.waiters.push((reply) => {
        clearTimeout(timer);
        resolve(JSON.parse(reply));
      });
      this.proc.stdin!.write(line + "\n");
    });
  }

  request(body: unknown): Promise<any> {
    return this.sendLine(JSON.stringify(body));
  }

  alive(): boolean {
    return this.proc.exitCode === null;
  }

  async close(): Promise<void> {
    if (this.alive()) {
      try {
        await this.request({ op: "shutdown" });
      } catch {
        this.proc.kill();
      }
    }
  }
}

export function datum(instruction: string, response: string) {
  return {
    instruction,
    response,
    media_ref: null,
    provenance: { iteration: 1, skill: "s", subskill: "s1", spec_digest: "d" },
  };
}

export function item(item_id: string, instruction: string) {
  return { item_id, instruction, gold_answer: "", domain: "simulated" };
}

export function waitForExit(proc: ChildProcess, ms = 5000): Promise<number | null> {
  return new Promise((resolve, reject) => {
    const timer = setTimeout(() => reject(new Error("worker did not exit")), ms);
    proc.on("exit", (code) => {
      clearTimeout(timer);
      resolve(code);
    });
  });
}
