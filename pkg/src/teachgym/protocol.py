"""Wire protocol for plugging real training stacks into the loop.

Requests and responses are single-line JSON bodies, carried either over a
worker subprocess's standard streams (newline-delimited) or as HTTP POST
bodies. One request is in flight at a time and responses arrive in request
order. This module holds the client side, a student adapter speaking the
protocol, and a conformance suite any external trainer must pass.
"""

from __future__ import annotations

import json
import subprocess
from dataclasses import dataclass, field
from typing import Any, Mapping, Protocol, Sequence

import jsonschema

from teachgym.core import (
    ComparisonMode,
    EvaluatedPrediction,
    NotSupportedError,
    TaskItem,
    TeachGymError,
    TrainingDatum,
    build_report,
    canonical_json,
    compare_answers,
)
from teachgym.student import StudentCheckpoint, TrainerUnavailableError

TRAIN_RESPONSE_SCHEMA = {
    "type": "object",
    "properties": {"ok": {"const": True}, "checkpoint": {"type": "string", "minLength": 1}},
    "required": ["ok", "checkpoint"],
}
EVALUATE_RESPONSE_SCHEMA = {
    "type": "object",
    "properties": {
        "ok": {"const": True},
        "predictions": {
            "type": "array",
            "items": {
                "type": "object",
                "properties": {
                    "item_id": {"type": "string"},
                    "predicted_answer": {"type": "string"},
                },
                "required": ["item_id", "predicted_answer"],
            },
        },
    },
    "required": ["ok", "predictions"],
}
SHUTDOWN_RESPONSE_SCHEMA = {
    "type": "object",
    "properties": {"ok": {"const": True}},
    "required": ["ok"],
}
ERROR_RESPONSE_SCHEMA = {
    "type": "object",
    "properties": {
        "ok": {"const": False},
        "error": {"type": "string"},
        "message": {"type": "string"},
    },
    "required": ["ok", "error"],
}


class ProtocolViolation(TeachGymError):
    pass


class TrainerTransport(Protocol):
    def request(self, body: Mapping[str, Any]) -> dict[str, Any]: ...
    def close(self) -> None: ...


class SubprocessTransport:
    """Launches the worker and exchanges newline-delimited JSON over its stdio."""

    def __init__(self, command: Sequence[str]) -> None:
        try:
            self.proc = subprocess.Popen(
                list(command),
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                stderr=subprocess.DEVNULL,
                text=True,
                bufsize=1,
            )
        except OSError as exc:
            raise TrainerUnavailableError(f"cannot launch trainer: {exc}") from exc

    def request(self, body: Mapping[str, Any]) -> dict[str, Any]:
        return self.send_line(canonical_json(body))

    def send_line(self, line: str) -> dict[str, Any]:
        if self.proc.poll() is not None:
            raise TrainerUnavailableError("trainer process has exited")
        assert self.proc.stdin and self.proc.stdout
        self.proc.stdin.write(line + "\n")
        self.proc.stdin.flush()
        reply = self.proc.stdout.readline()
        if not reply:
            raise TrainerUnavailableError("trainer closed its output stream")
        try:
            return json.loads(reply)
        except json.JSONDecodeError as exc:
            raise ProtocolViolation(f"non-JSON reply from trainer: {reply[:200]!r}") from exc

    def alive(self) -> bool:
        return self.proc.poll() is None

    def close(self) -> None:
        if self.proc.poll() is None:
            try:
                self.request({"op": "shutdown"})
            except TeachGymError:
                pass
            try:
                self.proc.wait(timeout=10)
            except subprocess.TimeoutExpired:
                self.proc.kill()


class HttpTransport:
    """Same request bodies as the stdio flavor, POSTed to a single endpoint."""

    def __init__(self, url: str) -> None:
        import httpx

        self.url = url
        self._client = httpx.Client(timeout=300.0)

    def request(self, body: Mapping[str, Any]) -> dict[str, Any]:
        import httpx

        try:
            resp = self._client.post(self.url, json=dict(body))
        except httpx.HTTPError as exc:
            raise TrainerUnavailableError(f"trainer endpoint unreachable: {exc}") from exc
        try:
            return resp.json()
        except json.JSONDecodeError as exc:
            raise ProtocolViolation("non-JSON reply from trainer endpoint") from exc

    def close(self) -> None:
        self._client.close()


class ExternalTrainerClient:
    """Typed calls over a transport, with response schema validation."""

    def __init__(self, transport: TrainerTransport, hyperparams: Mapping[str, Any] | None = None):
        self.transport = transport
        self.hyperparams = dict(hyperparams or {})

    def _checked(self, body: Mapping[str, Any], schema: Mapping[str, Any]) -> dict[str, Any]:
        reply = self.transport.request(body)
        if reply.get("ok") is False:
            jsonschema.validate(reply, ERROR_RESPONSE_SCHEMA)
            raise TrainerUnavailableError(
                f"trainer error {reply.get('error')}: {reply.get('message', '')}"
            )
        try:
            jsonschema.validate(reply, schema)
        except jsonschema.ValidationError as exc:
            raise ProtocolViolation(f"trainer reply violates schema: {exc.message}") from exc
        return reply

    def train(
        self,
        checkpoint: str | None,
        datums: Sequence[TrainingDatum],
        hyperparams: Mapping[str, Any] | None = None,
    ) -> str:
        body = {
            "op": "train",
            "checkpoint": checkpoint,
            "datums": [d.to_dict() for d in datums],
            "hyperparams": {**self.hyperparams, **(hyperparams or {})},
        }
        return self._checked(body, TRAIN_RESPONSE_SCHEMA)["checkpoint"]

    def evaluate(self, checkpoint: str, items: Sequence[TaskItem]) -> list[dict[str, str]]:
        return self.evaluate_raw(checkpoint, [i.to_dict() for i in items])

    def evaluate_raw(
        self, checkpoint: str, items: Sequence[Mapping[str, Any]]
    ) -> list[dict[str, str]]:
        body = {"op": "evaluate", "checkpoint": checkpoint, "items": [dict(i) for i in items]}
        return self._checked(body, EVALUATE_RESPONSE_SCHEMA)["predictions"]

    def shutdown(self) -> None:
        self._checked({"op": "shutdown"}, SHUTDOWN_RESPONSE_SCHEMA)


class ProtocolStudent:
    """Adapts an external trainer to the Train/Eval surface the environments use."""

    def __init__(self, client: ExternalTrainerClient):
        self.client = client

    def initial_checkpoint(self) -> StudentCheckpoint:
        handle = self.client.train(None, [])
        return StudentCheckpoint(
            checkpoint_id=handle, iteration=0, external_handle=handle
        )

    def train(
        self,
        checkpoint: StudentCheckpoint,
        datums: Sequence[TrainingDatum],
        iteration: int,
        epochs_multiplier: float = 1.0,
    ) -> StudentCheckpoint:
        if not datums:
            return checkpoint
        handle = self.client.train(
            checkpoint.external_handle, datums, {"epochs_multiplier": epochs_multiplier}
        )
        return StudentCheckpoint(
            checkpoint_id=handle, iteration=iteration, external_handle=handle
        )

    def evaluate(
        self,
        checkpoint: StudentCheckpoint,
        items: Sequence[TaskItem],
        iteration: int,
        skill_assignment: Mapping[str, str] | None = None,
    ):
        if not items:
            raise ValueError("evaluate needs a non-empty dataset")
        assert checkpoint.external_handle is not None
        raw = self.client.evaluate(checkpoint.external_handle, items)
        answer_by_id = {r["item_id"]: r["predicted_answer"] for r in raw}
        predictions = []
        for item in items:
            predicted = answer_by_id.get(item.item_id, "")
            try:
                correct = compare_answers(
                    predicted, item.gold_answer, item.domain.comparison_mode
                )
            except NotSupportedError:
                correct = False  # execution-scored domains abstain in-process
            except ValueError:
                correct = False
            predictions.append(
                EvaluatedPrediction(
                    item_id=item.item_id,
                    predicted_answer=predicted,
                    correct=correct,
                    iteration=iteration,
                    assigned_skill=(skill_assignment or {}).get(item.item_id),
                )
            )
        items_by_id = {i.item_id: i for i in items}
        return predictions, build_report(predictions, items_by_id, iteration)

    def evaluate_on_generated(
        self, checkpoint: StudentCheckpoint, datums: Sequence[TrainingDatum]
    ) -> float:
        if not datums:
            raise ValueError("evaluate_on_generated needs at least one datum")
        assert checkpoint.external_handle is not None
        items = [
            {"item_id": f"gen-{i:05d}", "instruction": d.instruction, "gold_answer": d.response}
            for i, d in enumerate(datums)
        ]
        raw = self.client.evaluate_raw(checkpoint.external_handle, items)
        answer_by_id = {r["item_id"]: r["predicted_answer"] for r in raw}
        correct = 0
        for entry in items:
            predicted = answer_by_id.get(entry["item_id"], "")
            if compare_answers(predicted, entry["gold_answer"], ComparisonMode.EXACT_MATCH_NORMALIZED):
                correct += 1
        return correct / len(items)

    def training_performance(self, checkpoint, datums):
        return {}


# ---------------------------------------------------------------------------
# Conformance suite
# ---------------------------------------------------------------------------

@dataclass
class ConformanceCheck:
    name: str
    ok: bool
    detail: str = ""


@dataclass
class ConformanceReport:
    checks: list[ConformanceCheck] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.ok for c in self.checks)

    def add(self, name: str, ok: bool, detail: str = "") -> None:
        self.checks.append(ConformanceCheck(name, ok, detail))

    def render(self) -> str:
        lines = []
        for c in self.checks:
            status = "PASS" if c.ok else "FAIL"
            suffix = f"  ({c.detail})" if c.detail else ""
            lines.append(f"[{status}] {c.name}{suffix}")
        verdict = "all checks passed" if self.passed else "CONFORMANCE FAILURE"
        lines.append(verdict)
        return "\n".join(lines)


def _mk_datum(q: str, a: str) -> dict[str, Any]:
    return {
        "instruction": q,
        "response": a,
        "media_ref": None,
        "provenance": {"iteration": 1, "skill": "s", "subskill": "s1", "spec_digest": "x" * 8},
    }


def _mk_item(item_id: str, q: str, gold: str) -> dict[str, Any]:
    return {
        "item_id": item_id,
        "instruction": q,
        "gold_answer": gold,
        "domain": "simulated",
        "media_ref": None,
        "difficulty": None,
        "true_skill": None,
        "true_subskill": None,
        "latent_pass_threshold": None,
    }


def run_conformance(transport: TrainerTransport) -> ConformanceReport:
    """Exercise schema validation, response ordering, error-path liveness,
    checkpoint immutability, and the memorization contract."""
    report = ConformanceReport()

    def checked(body: Mapping[str, Any], schema: Mapping[str, Any], name: str) -> dict[str, Any] | None:
        try:
            reply = transport.request(body)
            jsonschema.validate(reply, schema)
            report.add(name, True)
            return reply
        except (TeachGymError, jsonschema.ValidationError) as exc:
            report.add(name, False, str(exc)[:200])
            return None

    # train from scratch
    reply = checked(
        {"op": "train", "checkpoint": None, "datums": [_mk_datum("q1", "a1")], "hyperparams": {}},
        TRAIN_RESPONSE_SCHEMA,
        "train-from-null-checkpoint",
    )
    ckpt_a = reply["checkpoint"] if reply else None

    # memorization and prediction ordering
    if ckpt_a:
        reply = checked(
            {
                "op": "evaluate",
                "checkpoint": ckpt_a,
                "items": [_mk_item("i1", "q1", "a1"), _mk_item("i2", "q-unseen", "zz")],
            },
            EVALUATE_RESPONSE_SCHEMA,
            "evaluate-schema",
        )
        if reply:
            preds = reply["predictions"]
            ordered = [p["item_id"] for p in preds] == ["i1", "i2"]
            report.add("evaluate-order-matches-items", ordered, str([p["item_id"] for p in preds]))
            memorized = bool(preds) and preds[0]["predicted_answer"] == "a1"
            report.add("memorized-item-answered", memorized)
            abstained = len(preds) == 2 and preds[1]["predicted_answer"] == ""
            report.add("unseen-item-abstains", abstained)

    # error-path liveness: a bad request must produce an error and not kill the worker
    try:
        bad = transport.request({"op": "no-such-op"})
        jsonschema.validate(bad, ERROR_RESPONSE_SCHEMA)
        report.add("malformed-request-error-shape", True)
    except (TeachGymError, jsonschema.ValidationError) as exc:
        report.add("malformed-request-error-shape", False, str(exc)[:200])
    if ckpt_a:
        alive = checked(
            {"op": "evaluate", "checkpoint": ckpt_a, "items": [_mk_item("i3", "q1", "a1")]},
            EVALUATE_RESPONSE_SCHEMA,
            "alive-after-malformed-request",
        )
    # raw garbage on the wire (stdio only)
    if isinstance(transport, SubprocessTransport):
        try:
            bad = transport.send_line("this is not json")
            jsonschema.validate(bad, ERROR_RESPONSE_SCHEMA)
            still = transport.request(
                {"op": "evaluate", "checkpoint": ckpt_a, "items": [_mk_item("i4", "q1", "a1")]}
            )
            jsonschema.validate(still, EVALUATE_RESPONSE_SCHEMA)
            report.add("alive-after-garbage-line", True)
        except (TeachGymError, jsonschema.ValidationError) as exc:
            report.add("alive-after-garbage-line", False, str(exc)[:200])

    # checkpoint immutability: training from A must not mutate A
    if ckpt_a:
        reply = checked(
            {
                "op": "train",
                "checkpoint": ckpt_a,
                "datums": [_mk_datum("q2", "a2")],
                "hyperparams": {},
            },
            TRAIN_RESPONSE_SCHEMA,
            "train-from-existing-checkpoint",
        )
        ckpt_b = reply["checkpoint"] if reply else None
        if ckpt_b:
            report.add("new-checkpoint-id-differs", ckpt_b != ckpt_a, f"{ckpt_a} vs {ckpt_b}")
            old = checked(
                {
                    "op": "evaluate",
                    "checkpoint": ckpt_a,
                    "items": [_mk_item("i5", "q2", "a2")],
                },
                EVALUATE_RESPONSE_SCHEMA,
                "old-checkpoint-evaluate-schema",
            )
            if old:
                untouched = old["predictions"][0]["predicted_answer"] == ""
                report.add("old-checkpoint-unchanged", untouched)
            new = checked(
                {
                    "op": "evaluate",
                    "checkpoint": ckpt_b,
                    "items": [_mk_item("i6", "q2", "a2"), _mk_item("i7", "q1", "a1")],
                },
                EVALUATE_RESPONSE_SCHEMA,
                "new-checkpoint-evaluate-schema",
            )
            if new:
                both = [p["predicted_answer"] for p in new["predictions"]] == ["a2", "a1"]
                report.add("new-checkpoint-accumulates-memory", both)

    checked({"op": "shutdown"}, SHUTDOWN_RESPONSE_SCHEMA, "shutdown-ok")
    return report
