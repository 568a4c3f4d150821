/**
 * Memorizing student: checkpoints are instruction -> response maps.
 *
 * Training merges new pairs into a copy of the parent checkpoint's memory and
 * persists the result as a new file; existing checkpoints are never mutated.
 * Evaluation answers from memory and abstains (empty string) on unseen
 * instructions.
 */

import * as fs from "node:fs";
import * as path from "node:path";

export interface TrainingDatum {
  instruction: string;
  response: string;
}

export interface EvalItem {
  item_id: string;
  instruction: string;
}

export interface Prediction {
  item_id: string;
  predicted_answer: string;
}

type Memory = Record<string, string>;

export class UnknownCheckpointError extends Error {}

export class MemorizingStudent {
  private readonly dir: string;
  private counter: number;

  constructor(checkpointDir: string) {
    this.dir = checkpointDir;
    fs.mkdirSync(this.dir, { recursive: true });
    this.counter = this.scanExistingCounter();
  }

  private scanExistingCounter(): number {
    let max = 0;
    for (const name of fs.readdirSync(this.dir)) {
      const match = /^ckpt-(\d+)\.json$/.exec(name);
      if (match) {
        max = Math.max(max, parseInt(match[1], 10));
      }
    }
    return max;
  }

  private checkpointPath(id: string): string {
    if (!/^ckpt-\d+$/.test(id)) {
      throw new UnknownCheckpointError(`malformed checkpoint id: ${id}`);
    }
    return path.join(this.dir, `${id}.json`);
  }

  private load(id: string): Memory {
    const file = this.checkpointPath(id);
    if (!fs.existsSync(file)) {
      throw new UnknownCheckpointError(`no such checkpoint: ${id}`);
    }
    return JSON.parse(fs.readFileSync(file, "utf-8")) as Memory;
  }

  train(base: string | null, datums: TrainingDatum[]): string {
    const memory: Memory = base === null ? {} : { ...this.load(base) };
    for (const datum of datums) {
      memory[datum.instruction] = datum.response;
    }
    this.counter += 1;
    const id = `ckpt-${String(this.counter).padStart(6, "0")}`;
    fs.writeFileSync(this.checkpointPath(id), JSON.stringify(memory));
    return id;
  }

  evaluate(checkpoint: string, items: EvalItem[]): Prediction[] {
    const memory = this.load(checkpoint);
    return items.map((item) => ({
      item_id: item.item_id,
      predicted_answer: memory[item.instruction] ?? "",
    }));
  }
}
