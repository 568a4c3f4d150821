"""Chat-completion port with structured-output parsing.

Three interchangeable backends sit behind one ``complete()`` surface: a live
HTTP client, a deterministic mock (a pure function of template id, variables,
and seed), and a transcript player that re-serves recorded responses so any
episode can be replayed offline.
"""

from __future__ import annotations

import datetime as _dt
import json
import math
import os
import re
import threading
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from string import Template
from typing import Any, Mapping, Protocol

import jsonschema

from teachgym.core import TeachGymError, canonical_json, digest, stable_unit_float


class ProviderError(TeachGymError):
    pass


class StructuredParseFailure(ProviderError):
    def __init__(self, message: str, raw_text: str) -> None:
        super().__init__(message)
        self.raw_text = raw_text


class ProviderUnavailable(ProviderError):
    pass


# ---------------------------------------------------------------------------
# Output schemas
# ---------------------------------------------------------------------------

def _obj(properties: dict[str, Any], required: list[str]) -> dict[str, Any]:
    return {"type": "object", "properties": properties, "required": required}


_STR = {"type": "string", "minLength": 1}

SCHEMAS: dict[str, dict[str, Any]] = {
    "skill_label": _obj({"skill": _STR}, ["skill"]),
    "skill_categories": _obj(
        {
            "categories": {
                "type": "object",
                "additionalProperties": {"type": "array", "items": _STR},
            }
        },
        ["categories"],
    ),
    "subskill_proposals": _obj(
        {"proposals": {"type": "array", "items": _STR}}, ["proposals"]
    ),
    "data_specs": _obj(
        {
            "specs": {
                "type": "array",
                "items": _obj(
                    {
                        "instruction": _STR,
                        "target_skill": {"type": ["string", "null"]},
                        "target_subskill": {"type": ["string", "null"]},
                    },
                    ["instruction"],
                ),
            }
        },
        ["specs"],
    ),
    "math_datum": _obj(
        {"question": _STR, "solution_steps": _STR, "final_answer": _STR},
        ["question", "solution_steps", "final_answer"],
    ),
    "vqa_description": _obj({"description": _STR}, ["description"]),
    "vqa_question": _obj({"question": _STR, "answer": _STR}, ["question", "answer"]),
    "code_problem": _obj({"problem": _STR, "starter_code": _STR}, ["problem", "starter_code"]),
    "code_solution": _obj({"solution": _STR}, ["solution"]),
    "simulated_datum": _obj({"instruction": _STR, "response": _STR}, ["instruction", "response"]),
}


_VALIDATORS: dict[str, jsonschema.Validator] = {}


def validate_payload(schema_id: str, payload: Any) -> None:
    if schema_id not in SCHEMAS:
        raise ProviderError(f"schema {schema_id!r} is not registered")
    validator = _VALIDATORS.get(schema_id)
    if validator is None:
        validator = jsonschema.Draft202012Validator(SCHEMAS[schema_id])
        _VALIDATORS[schema_id] = validator
    validator.validate(payload)


# ---------------------------------------------------------------------------
# Prompt templates
# ---------------------------------------------------------------------------

def _template_text(template_id: str) -> str:
    ref = resources.files("teachgym") / "templates" / f"{template_id}.txt"
    if not ref.is_file():
        raise ProviderError(f"template asset {template_id!r} does not exist")
    return ref.read_text(encoding="utf-8")


def render_template(template_id: str, variables: Mapping[str, Any]) -> str:
    """Substitute variables into the named template asset; non-strings are JSON-encoded."""
    rendered = {
        k: v if isinstance(v, str) else json.dumps(v, sort_keys=True)
        for k, v in variables.items()
    }
    return Template(_template_text(template_id)).safe_substitute(rendered)


@dataclass(frozen=True)
class CompletionRequest:
    template_id: str
    variables: Mapping[str, Any]
    schema_id: str
    temperature: float = 0.0
    top_p: float = 1.0
    max_retries: int = 2

    def __post_init__(self) -> None:
        if self.schema_id not in SCHEMAS:
            raise ProviderError(f"schema {self.schema_id!r} is not registered")
        _template_text(self.template_id)  # raises if the asset is missing

    def digest(self) -> str:
        return digest(
            {
                "template_id": self.template_id,
                "variables": dict(self.variables),
                "schema_id": self.schema_id,
            }
        )


@dataclass(frozen=True)
class StructuredResponse:
    payload: Any
    raw_text: str
    attempts: int = 1


class ChatProvider(Protocol):
    def complete(self, request: CompletionRequest) -> StructuredResponse: ...


# ---------------------------------------------------------------------------
# Transcript logging / replay
# ---------------------------------------------------------------------------

class TranscriptLogger:
    """Append-only JSONL log of every request/response pair; appends are serialized."""

    def __init__(self, path: Path | str) -> None:
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()

    def append(self, request: CompletionRequest, raw_response: str) -> None:
        record = {
            "request_digest": request.digest(),
            "template_id": request.template_id,
            "variables": dict(request.variables),
            "raw_response": raw_response,
            "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(),
        }
        with self._lock:
            with self.path.open("a", encoding="utf-8") as fh:
                fh.write(canonical_json(record) + "\n")


class TranscriptReplayProvider:
    """Serves recorded responses keyed by request digest; no network, no model."""

    def __init__(self, transcript_path: Path | str) -> None:
        self._queues: dict[str, list[str]] = {}
        with Path(transcript_path).open("r", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                rec = json.loads(line)
                self._queues.setdefault(rec["request_digest"], []).append(rec["raw_response"])

    def complete(self, request: CompletionRequest) -> StructuredResponse:
        queue = self._queues.get(request.digest())
        if not queue:
            raise ProviderUnavailable(
                f"transcript has no recorded response for template {request.template_id!r}"
            )
        raw = queue.pop(0) if len(queue) > 1 else queue[0]
        payload = json.loads(raw)
        validate_payload(request.schema_id, payload)
        return StructuredResponse(payload, raw)


# ---------------------------------------------------------------------------
# Deterministic mock
# ---------------------------------------------------------------------------

_SUB_INDEX = re.compile(r"::sub(\d+)$")


def largest_remainder_allocation(weights: Mapping[str, float], budget: int) -> dict[str, int]:
    """Apportion ``budget`` integer counts proportionally to ``weights``.

    Floors first, then hands out remainders by largest fractional part; ties
    broken by key order. Uniform when all weights are zero.
    """
    keys = sorted(weights)
    total = sum(weights[k] for k in keys)
    if total <= 0:
        weights = {k: 1.0 for k in keys}
        total = float(len(keys))
    quotas = {k: budget * weights[k] / total for k in keys}
    counts = {k: math.floor(quotas[k]) for k in keys}
    leftover = budget - sum(counts.values())
    by_remainder = sorted(keys, key=lambda k: (-(quotas[k] - counts[k]), k))
    for k in by_remainder[:leftover]:
        counts[k] += 1
    return counts


class MockProvider:
    """Rule-based stand-in for the live model.

    Every response is a pure function of (template id, variables, seed), so
    episodes built on the mock replay bit-exactly. ``confusion_rate`` corrupts
    a seeded fraction of skill-annotation labels to let tests degrade the
    discovery stage on purpose.
    """

    def __init__(
        self,
        seed: int = 0,
        confusion_rate: float = 0.0,
        transcript: TranscriptLogger | None = None,
    ) -> None:
        if not 0.0 <= confusion_rate <= 1.0:
            raise ValueError("confusion_rate must be in [0,1]")
        self.seed = seed
        self.confusion_rate = confusion_rate
        self.transcript = transcript

    # -- dispatch -----------------------------------------------------------

    def complete(self, request: CompletionRequest) -> StructuredResponse:
        handler = getattr(self, "_handle_" + request.template_id, None)
        if handler is None:
            raise ProviderError(f"mock has no rule for template {request.template_id!r}")
        payload = handler(dict(request.variables))
        validate_payload(request.schema_id, payload)
        raw = canonical_json(payload)
        if self.transcript is not None:
            self.transcript.append(request, raw)
        return StructuredResponse(payload, raw)

    def _unit(self, *parts: Any) -> float:
        return stable_unit_float(self.seed, *parts)

    # -- skill discovery ----------------------------------------------------

    def _handle_skill_annotation(self, v: dict[str, Any]) -> dict[str, Any]:
        label = v.get("true_skill") or "General Problem Solving"
        u = self._unit("skill_annotation", canonical_json(v))
        if u < self.confusion_rate:
            pick = 1 + int(self._unit("confusion-pick", canonical_json(v)) * 3)
            label = f"Confusable Topic {pick}"
        return {"skill": label}

    def _handle_skill_aggregation(self, v: dict[str, Any]) -> dict[str, Any]:
        counts: dict[str, int] = dict(v["label_counts"])
        max_categories = int(v.get("max_categories", 15))

        by_suffix: dict[str, list[str]] = {}
        for label in sorted(counts):
            suffix = label.split()[-1].casefold()
            by_suffix.setdefault(suffix, []).append(label)

        categories: dict[str, list[str]] = {}
        for suffix, labels in by_suffix.items():
            if len(labels) >= 2:
                categories[labels[0].split()[-1]] = labels
            else:
                categories[labels[0]] = labels

        if len(categories) > max_categories:
            def weight(name: str) -> int:
                return sum(counts[l] for l in categories[name])

            keep = sorted(categories, key=lambda n: (-weight(n), n))[: max_categories - 1]
            merged = sorted(l for n in categories if n not in keep for l in categories[n])
            categories = {n: categories[n] for n in keep}
            categories["Uncategorized"] = merged
        return {"categories": {k: categories[k] for k in sorted(categories)}}

    def _handle_subskill_proposal(self, v: dict[str, Any]) -> dict[str, Any]:
        skill, existing, k = v["skill"], list(v["existing"]), int(v["k"])
        top = 0
        for name in existing:
            m = _SUB_INDEX.search(name)
            if m and name.startswith(f"{skill}::"):
                top = max(top, int(m.group(1)))
        proposals = [f"{skill}::sub{top + i + 1}" for i in range(k)]
        return {"proposals": proposals}

    # -- data generation policies -------------------------------------------

    def _handle_policy_open_ended(self, v: dict[str, Any]) -> dict[str, Any]:
        budget = int(v["budget"])
        domain = v["domain"]
        errors: list[dict[str, Any]] = list(v.get("errors", []))
        specs = []
        if errors:
            for i in range(budget):
                err = errors[i % len(errors)]
                rep = i // len(errors) + 1
                specs.append(
                    {
                        "instruction": (
                            f"Write a new {domain} practice question targeting the "
                            f"weakness shown by item {err['item_id']} (variation {rep})"
                        ),
                        "target_skill": err.get("assigned_skill"),
                        "target_subskill": None,
                    }
                )
        else:
            samples: list[dict[str, Any]] = list(v.get("samples", []))
            for i in range(budget):
                anchor = samples[i % len(samples)]["item_id"] if samples else f"review-{i + 1}"
                specs.append(
                    {
                        "instruction": f"Write a {domain} review question reinforcing {anchor}",
                        "target_skill": None,
                        "target_subskill": None,
                    }
                )
        return {"specs": specs}

    def _handle_policy_skill_list(self, v: dict[str, Any]) -> dict[str, Any]:
        budget = int(v["budget"])
        domain = v["domain"]
        skills: dict[str, Any] = dict(v["skills"])
        weights = {name: 1.0 - float(info["accuracy"]) for name, info in skills.items()}
        counts = largest_remainder_allocation(weights, budget)
        specs = []
        for name in sorted(counts):
            for j in range(counts[name]):
                specs.append(
                    {
                        "instruction": (
                            f"Write a new {domain} practice question for skill "
                            f"'{name}' (item {j + 1} of {counts[name]})"
                        ),
                        "target_skill": name,
                        "target_subskill": None,
                    }
                )
        return {"specs": specs}

    # -- data generation engines ---------------------------------------------

    def _tag(self, v: Mapping[str, Any]) -> str:
        return f"[skill={v.get('target_skill')} subskill={v.get('target_subskill')}]"

    def _handle_datagen_simulated(self, v: dict[str, Any]) -> dict[str, Any]:
        return {
            "instruction": v["instruction"],
            "response": f"{self._tag(v)} worked practice answer",
        }

    def _handle_datagen_math(self, v: dict[str, Any]) -> dict[str, Any]:
        n = 1 + int(self._unit("math-answer", canonical_json(v)) * 97)
        return {
            "question": f"{v['instruction']} {self._tag(v)}",
            "solution_steps": f"Step 1: set up the quantity. Step 2: simplify to {n}.",
            "final_answer": str(n),
        }

    def _handle_datagen_vqa_description(self, v: dict[str, Any]) -> dict[str, Any]:
        return {"description": f"a staged scene exercising {self._tag(v)}: {v['instruction']}"}

    def _handle_datagen_vqa_question(self, v: dict[str, Any]) -> dict[str, Any]:
        yes = self._unit("vqa-answer", canonical_json(v)) < 0.5
        return {
            "question": f"Does the image match the request? {self._tag(v)}",
            "answer": "yes" if yes else "no",
        }

    def _handle_datagen_code_problem(self, v: dict[str, Any]) -> dict[str, Any]:
        return {
            "problem": f"Implement a function for: {v['instruction']} {self._tag(v)}",
            "starter_code": "def solve(data):\n    # TODO: implement\n    raise NotImplementedError\n",
        }

    def _handle_datagen_code_solution(self, v: dict[str, Any]) -> dict[str, Any]:
        return {"solution": "def solve(data):\n    return sorted(data)\n"}


# ---------------------------------------------------------------------------
# Live HTTP backend
# ---------------------------------------------------------------------------

class LiveProvider:
    """Client for any chat-completion HTTP endpoint.

    The credential is read from the environment (never from config files).
    Parse failures re-ask with the validation error appended, up to the
    request's retry budget.
    """

    def __init__(
        self,
        base_url: str,
        model: str,
        credential_env: str = "TEACHGYM_API_KEY",
        transcript: TranscriptLogger | None = None,
        max_in_flight: int = 4,
        transport: Any = None,
    ) -> None:
        import httpx

        self.base_url = base_url.rstrip("/")
        self.model = model
        self.credential_env = credential_env
        self.transcript = transcript
        self._semaphore = threading.Semaphore(max_in_flight)
        self._client = httpx.Client(transport=transport, timeout=120.0)

    def _headers(self) -> dict[str, str]:
        key = os.environ.get(self.credential_env, "")
        headers = {"Content-Type": "application/json"}
        if key:
            headers["Authorization"] = f"Bearer {key}"
        return headers

    def _post_once(self, prompt: str, request: CompletionRequest) -> str:
        import httpx

        body = {
            "model": self.model,
            "temperature": request.temperature,
            "top_p": request.top_p,
            "messages": [{"role": "user", "content": prompt}],
            "response_format": {"type": "json_object"},
        }
        try:
            resp = self._client.post(
                f"{self.base_url}/chat/completions", json=body, headers=self._headers()
            )
            resp.raise_for_status()
        except httpx.HTTPError as exc:
            raise ProviderUnavailable(f"provider transport failure: {exc}") from exc
        data = resp.json()
        return data["choices"][0]["message"]["content"]

    def complete(self, request: CompletionRequest) -> StructuredResponse:
        prompt = render_template(request.template_id, request.variables)
        last_raw, last_error = "", ""
        with self._semaphore:
            for attempt in range(1, request.max_retries + 2):
                ask = prompt if attempt == 1 else (
                    f"{prompt}\n\nYour previous reply was invalid: {last_error}\n"
                    "Reply again with JSON matching the requested shape."
                )
                raw = self._post_once(ask, request)
                last_raw = raw
                if self.transcript is not None:
                    self.transcript.append(request, raw)
                try:
                    payload = json.loads(raw)
                    validate_payload(request.schema_id, payload)
                    return StructuredResponse(payload, raw, attempts=attempt)
                except (json.JSONDecodeError, jsonschema.ValidationError) as exc:
                    last_error = str(exc).splitlines()[0]
        raise StructuredParseFailure(
            f"no schema-valid reply after {request.max_retries + 1} attempts", last_raw
        )


def is_deterministic_provider(provider: Any) -> bool:
    return isinstance(provider, (MockProvider, TranscriptReplayProvider))
