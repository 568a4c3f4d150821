#!/usr/bin/env node
/**
 * Reference external-trainer worker.
 *
 * Default mode exchanges newline-delimited JSON over stdio; `--http <port>`
 * serves the same request bodies over HTTP POST instead (port 0 picks a free
 * port and reports it on stdout as {"ready":true,"port":N}).
 *
 * Requests are handled strictly one at a time, so responses always arrive in
 * request order. Checkpoints persist as files under --checkpoint-dir.
 */

import * as http from "node:http";
import * as os from "node:os";
import * as path from "node:path";
import * as readline from "node:readline";

import { dispatch, dispatchLine } from "./protocol";
import { MemorizingStudent } from "./student";

interface Options {
  httpPort: number | null;
  checkpointDir: string;
}

function parseArgs(argv: string[]): Options {
  const options: Options = {
    httpPort: null,
    checkpointDir: path.join(os.tmpdir(), `teachgym-adapter-${process.pid}`),
  };
  for (let i = 0; i < argv.length; i += 1) {
    if (argv[i] === "--http") {
      options.httpPort = parseInt(argv[i + 1] ?? "", 10);
      if (Number.isNaN(options.httpPort)) {
        throw new Error("--http needs a port number");
      }
      i += 1;
    } else if (argv[i] === "--checkpoint-dir") {
      const dir = argv[i + 1];
      if (!dir) throw new Error("--checkpoint-dir needs a path");
      options.checkpointDir = dir;
      i += 1;
    } else {
      throw new Error(`unknown argument: ${argv[i]}`);
    }
  }
  return options;
}

function serveStdio(student: MemorizingStudent): void {
  const rl = readline.createInterface({ input: process.stdin, terminal: false });
  rl.on("line", (line) => {
    if (line.trim() === "") return;
    const { response, shutdown } = dispatchLine(student, line);
    process.stdout.write(JSON.stringify(response) + "\n");
    if (shutdown) {
      rl.close();
      process.exit(0);
    }
  });
}

function serveHttp(student: MemorizingStudent, port: number): void {
  const server = http.createServer((req, res) => {
    const chunks: Buffer[] = [];
    req.on("data", (chunk) => chunks.push(chunk));
    req.on("end", () => {
      const { response, shutdown } = dispatchLine(student, Buffer.concat(chunks).toString("utf-8"));
      res.writeHead(200, { "Content-Type": "application/json" });
      res.end(JSON.stringify(response));
      if (shutdown) {
        server.close(() => process.exit(0));
      }
    });
  });
  server.listen(port, "127.0.0.1", () => {
    const address = server.address();
    const actual = typeof address === "object" && address !== null ? address.port : port;
    process.stdout.write(JSON.stringify({ ready: true, port: actual }) + "\n");
  });
}

function main(): void {
  const options = parseArgs(process.argv.slice(2));
  const student = new MemorizingStudent(options.checkpointDir);
  if (options.httpPort !== null) {
    serveHttp(student, options.httpPort);
  } else {
    serveStdio(student);
  }
}

main();
