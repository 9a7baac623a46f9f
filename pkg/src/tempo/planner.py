"""Plans as DAGs of tool invocations, plus the model-client seam.

Plan JSON (what a model client must emit for a planning prompt)::

    {"steps": [
        {"step_id": 1, "server": "iot", "tool": "list_sensors",
         "args_template": {"asset": "Chiller 6"}, "depends_on": []},
        {"step_id": 2, "server": "fmsr", "tool": "failure_modes_for_sensor",
         "args_template": {"asset_type": "Chiller", "context": "$step1"},
         "depends_on": [1]}
    ]}

``$stepN`` may appear anywhere inside a string leaf of ``args_template``. It is
replaced by step N's output, rendered as compact JSON unless the output is
already a string. A leaf that is exactly ``$stepN`` is replaced the same way,
so substitution always yields strings.

The reference :class:`StubModelClient` plans by matching the query against
the bundled scenario templates (``tempo/data/scenarios.json``) and summarizes
by concatenating step outputs.
"""

from __future__ import annotations

import asyncio
import json
import re
import time
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from importlib import resources
from pathlib import Path
from typing import Any, Iterable, Mapping, Optional, Protocol, Sequence

from tempo.discovery import ToolCatalog
from tempo.temporal import (
    Query,
    TemporalBucket,
    classify_and_resolve,
    format_instant,
    parse_instant,
)

PLACEHOLDER_RE = re.compile(r"\$step(\d+)")


class PlanningError(Exception):
    """The model output could not be turned into a plan; ``raw`` keeps it."""

    def __init__(self, message: str, raw: str | None = None):
        super().__init__(message)
        self.raw = raw


class PlanValidationError(PlanningError):
    pass


class ResolutionError(Exception):
    pass


class SummarizationError(Exception):
    pass


@dataclass(frozen=True)
class PlanStep:
    step_id: int
    server: str
    tool: str
    args_template: dict = field(default_factory=dict)
    depends_on: frozenset[int] = frozenset()

    def __post_init__(self) -> None:
        object.__setattr__(self, "depends_on", frozenset(self.depends_on))

    @property
    def qualified_tool(self) -> str:
        return f"{self.server}.{self.tool}"

    def placeholders(self) -> set[int]:
        return set(_placeholders(self.args_template))

    def to_json(self) -> dict:
        return {
            "step_id": self.step_id,
            "server": self.server,
            "tool": self.tool,
            "args_template": self.args_template,
            "depends_on": sorted(self.depends_on),
        }

    @classmethod
    def from_json(cls, obj: Mapping) -> "PlanStep":
        if not isinstance(obj, Mapping):
            raise PlanValidationError(f"step must be an object, got {type(obj).__name__}")
        missing = [k for k in ("step_id", "server", "tool") if k not in obj]
        if missing:
            raise PlanValidationError(f"step is missing {', '.join(missing)}")
        sid = obj["step_id"]
        if not isinstance(sid, int) or isinstance(sid, bool) or sid < 1:
            raise PlanValidationError(f"step_id must be a positive integer, got {sid!r}")
        if not isinstance(obj["server"], str) or not isinstance(obj["tool"], str):
            raise PlanValidationError(f"step {sid}: server and tool must be strings")
        args = obj.get("args_template", obj.get("args", {}))
        if not isinstance(args, dict):
            raise PlanValidationError(f"step {sid}: args_template must be an object")
        deps = obj.get("depends_on", [])
        if not isinstance(deps, list) or not all(isinstance(d, int) and not isinstance(d, bool) for d in deps):
            raise PlanValidationError(f"step {sid}: depends_on must be a list of step ids")
        return cls(sid, obj["server"], obj["tool"], args, frozenset(deps))


@dataclass(frozen=True)
class Plan:
    steps: tuple[PlanStep, ...]
    query_id: str = ""

    def __post_init__(self) -> None:
        object.__setattr__(self, "steps", tuple(self.steps))

    def __len__(self) -> int:
        return len(self.steps)

    def step(self, step_id: int) -> PlanStep:
        for s in self.steps:
            if s.step_id == step_id:
                return s
        raise KeyError(step_id)

    def servers(self) -> list[str]:
        return sorted({s.server for s in self.steps})

    def to_json(self) -> dict:
        return {"query_id": self.query_id, "steps": [s.to_json() for s in self.steps]}

    @classmethod
    def from_json(cls, obj: Mapping, query_id: str | None = None) -> "Plan":
        if not isinstance(obj, Mapping) or not isinstance(obj.get("steps"), list):
            raise PlanValidationError("plan must be an object with a 'steps' array")
        qid = query_id if query_id is not None else str(obj.get("query_id", ""))
        return cls(tuple(PlanStep.from_json(s) for s in obj["steps"]), qid)


def _placeholders(value: Any) -> Iterable[int]:
    if isinstance(value, str):
        for m in PLACEHOLDER_RE.finditer(value):
            yield int(m.group(1))
    elif isinstance(value, dict):
        for v in value.values():
            yield from _placeholders(v)
    elif isinstance(value, list):
        for v in value:
            yield from _placeholders(v)


def find_cycle(steps: Sequence[PlanStep]) -> Optional[list[int]]:
    """Step ids left over after Kahn's algorithm, or None when acyclic."""
    ids = {s.step_id for s in steps}
    indeg = {s.step_id: len(s.depends_on & ids) for s in steps}
    children: dict[int, list[int]] = {i: [] for i in ids}
    for s in steps:
        for d in s.depends_on & ids:
            children[d].append(s.step_id)
    ready = [i for i, n in indeg.items() if n == 0]
    seen = 0
    while ready:
        i = ready.pop()
        seen += 1
        for c in children[i]:
            indeg[c] -= 1
            if indeg[c] == 0:
                ready.append(c)
    if seen == len(ids):
        return None
    return sorted(i for i, n in indeg.items() if n > 0)


def validate_plan(plan: Plan, catalog: ToolCatalog | None = None) -> Plan:
    """Raise :class:`PlanValidationError` on the first problem found."""
    ids: set[int] = set()
    for s in plan.steps:
        if s.step_id in ids:
            raise PlanValidationError(f"duplicate step_id {s.step_id}")
        ids.add(s.step_id)
    for s in plan.steps:
        unknown = s.depends_on - ids
        if unknown:
            raise PlanValidationError(f"step {s.step_id} depends on unknown step(s) {sorted(unknown)}")
        if s.step_id in s.depends_on:
            raise PlanValidationError(f"step {s.step_id} depends on itself (cycle)")
    cycle = find_cycle(plan.steps)
    if cycle:
        raise PlanValidationError(f"dependency cycle among steps {cycle}")
    declared: set[int] = set()
    for s in plan.steps:
        later = s.depends_on - declared
        if later:
            raise PlanValidationError(f"step {s.step_id} depends on later-declared step(s) {sorted(later)}")
        declared.add(s.step_id)
        dangling = s.placeholders() - s.depends_on
        if dangling:
            refs = ", ".join(f"$step{n}" for n in sorted(dangling))
            raise PlanValidationError(f"step {s.step_id} has dangling placeholder(s) {refs}")
        if catalog is not None and not catalog.has(s.server, s.tool):
            raise PlanValidationError(f"step {s.step_id} references unknown tool {s.qualified_tool}")
    return plan


# --------------------------------------------------------------------------
# Argument resolution


def render_output(output: Any) -> str:
    if isinstance(output, str):
        return output
    return json.dumps(output, separators=(",", ":"), sort_keys=True, ensure_ascii=False)


def resolve_args(step: PlanStep, completed: Mapping[int, Any]) -> dict:
    """Substitute ``$stepN`` placeholders from completed step results.

    ``completed`` maps step ids to objects with ``status`` and ``output``
    (executor StepResults). A missing or non-Ok dependency raises
    :class:`ResolutionError`.
    """
    outputs: dict[int, str] = {}
    for dep in sorted(step.depends_on):
        res = completed.get(dep)
        status = getattr(res, "status", None)
        if res is None:
            raise ResolutionError(f"step {step.step_id}: dependency {dep} has not completed")
        if getattr(status, "value", status) != "Ok":
            raise ResolutionError(f"step {step.step_id}: dependency {dep} did not succeed")
        outputs[dep] = render_output(res.output)

    def sub(value: Any) -> Any:
        if isinstance(value, str):
            def repl(m: re.Match) -> str:
                n = int(m.group(1))
                if n not in outputs:
                    raise ResolutionError(f"step {step.step_id}: $step{n} is not a dependency")
                return outputs[n]

            return PLACEHOLDER_RE.sub(repl, value)
        if isinstance(value, dict):
            return {k: sub(v) for k, v in value.items()}
        if isinstance(value, list):
            return [sub(v) for v in value]
        return value

    return sub(step.args_template)


# --------------------------------------------------------------------------
# Model clients and prompts


class ModelClient(Protocol):
    def complete(self, prompt: str) -> str: ...


PLAN_MARKER = "### TASK: PLAN"
SUMMARIZE_MARKER = "### TASK: SUMMARIZE"


def _one_line(text: str) -> str:
    return " ".join(text.split())


def plan_prompt(query: Query, catalog: ToolCatalog) -> str:
    lines = [
        PLAN_MARKER,
        f"QUERY: {_one_line(query.text)}",
        f"ISSUED_AT: {format_instant(query.issued_at)}",
        "TOOLS:",
    ]
    for t in catalog.tools:
        props = sorted((t.params_schema or {}).get("properties", {}))
        lines.append(f"- {t.server}.{t.tool}({', '.join(props)}): {_one_line(t.description)}")
    lines.append(
        'Reply with JSON only: {"steps": [{"step_id": int, "server": str, "tool": str, '
        '"args_template": object, "depends_on": [int]}]}. Use "$stepN" inside a string '
        "argument to pass the output of step N, and list N in depends_on."
    )
    return "\n".join(lines)


def summarize_prompt(query: Query, results: Sequence[Any]) -> str:
    payload = [
        {
            "step_id": r.step_id,
            "server": getattr(r, "server", None),
            "tool": getattr(r, "tool", None),
            "status": getattr(r.status, "value", r.status),
            "output": r.output,
            "error": r.error,
        }
        for r in results
    ]
    return "\n".join(
        [
            SUMMARIZE_MARKER,
            f"QUERY: {_one_line(query.text)}",
            "Write a short answer to the query from these tool results.",
            "RESULTS:",
            json.dumps(payload, sort_keys=True, separators=(",", ":"), ensure_ascii=False),
        ]
    )


def _strip_fences(raw: str) -> str:
    s = raw.strip()
    if s.startswith("```"):
        s = s.split("\n", 1)[1] if "\n" in s else ""
        if s.rstrip().endswith("```"):
            s = s.rstrip()[:-3]
    return s.strip()


def parse_plan(raw: str, query_id: str, catalog: ToolCatalog | None = None) -> Plan:
    try:
        obj = json.loads(_strip_fences(raw))
    except ValueError as exc:
        raise PlanningError(f"model output is not JSON: {exc}", raw) from None
    try:
        return validate_plan(Plan.from_json(obj, query_id), catalog)
    except PlanValidationError as exc:
        exc.raw = raw
        raise


def make_plan(query: Query, catalog: ToolCatalog, client: ModelClient) -> Plan:
    if not len(catalog):
        raise PlanningError("tool catalog is empty")
    raw = client.complete(plan_prompt(query, catalog))
    return parse_plan(raw, query.id, catalog)


def summarize(query: Query, results: Sequence[Any], client: ModelClient) -> str:
    if not results:
        raise SummarizationError("nothing to summarize")
    try:
        return client.complete(summarize_prompt(query, results))
    except Exception as exc:
        raise SummarizationError(f"summarizer failed: {exc}") from exc


async def make_plan_async(query: Query, catalog: ToolCatalog, client: ModelClient) -> Plan:
    return await asyncio.to_thread(make_plan, query, catalog, client)


async def summarize_async(query: Query, results: Sequence[Any], client: ModelClient) -> str:
    return await asyncio.to_thread(summarize, query, results, client)


# --------------------------------------------------------------------------
# Rule-based stand-in for the planner / summarizer model


def load_scenarios(path: str | Path | None = None) -> dict:
    if path is None:
        text = resources.files("tempo.data").joinpath("scenarios.json").read_text("utf-8")
    else:
        text = Path(path).read_text("utf-8")
    return json.loads(text)


_ASSET_RE = re.compile(r"\b(chiller|ahu|pump|boiler)[\s-]*(\d+)\b", re.IGNORECASE)
_TYPE_RE = re.compile(r"\b(chiller|ahu|pump|boiler)s?\b", re.IGNORECASE)
_WO_RE = re.compile(r"\bWO-(\d+)\b", re.IGNORECASE)
_HORIZON_RE = re.compile(r"\b(\d+)[\s-]*days?\s+horizon\b", re.IGNORECASE)


def _fold(s: str) -> str:
    return " ".join(s.lower().split())


class ScenarioRules:
    """Keyword/template matcher over the bundled scenario file."""

    def __init__(self, data: dict | None = None):
        data = data if data is not None else load_scenarios()
        lex = data["lexicon"]
        self.scenarios = data["scenarios"]
        self.asset_types = {t.lower(): t for t in lex["asset_types"]}
        self.sites = list(lex["sites"])
        # longest names first so "Supply Air Temperature" wins over "Supply Temperature"
        names = {_fold(s): s for s in lex["sensors"]}
        names.update({_fold(k): v for k, v in lex["sensor_aliases"].items()})
        self.sensor_names = sorted(names.items(), key=lambda kv: -len(kv[0]))
        self.failure_modes = sorted(lex["failure_modes"], key=len, reverse=True)
        self.fallback = lex["fallback"]
        self.fallback_keywords = [(d, re.compile(p, re.IGNORECASE)) for d, p in lex["fallback_keywords"]]
        self._compiled = [[re.compile(p, re.IGNORECASE) for p in sc["match"]] for sc in self.scenarios]

    def extract(self, text: str, issued_at: datetime) -> dict[str, Any]:
        params: dict[str, Any] = {"issued_day": issued_at.date().isoformat(), "horizon": 7}
        m = _ASSET_RE.search(text)
        if m:
            kind = self.asset_types[m.group(1).lower()]
            params["asset"] = f"{kind} {int(m.group(2))}"
            params["asset_type"] = kind
        else:
            m = _TYPE_RE.search(text)
            if m:
                params["asset_type"] = self.asset_types[m.group(1).lower()]
        folded = " " + _fold(re.sub(r"[^\w%\s-]", " ", text)) + " "
        for name, canonical in self.sensor_names:
            if f" {name} " in folded:
                params["sensor"] = canonical
                break
        for fm in self.failure_modes:
            if f" {_fold(fm)} " in folded:
                params["failure_mode"] = fm
                break
        m = _WO_RE.search(text)
        if m:
            params["wo_id"] = f"WO-{m.group(1)}"
        for site in self.sites:
            if re.search(rf"\b{site}\b", text, re.IGNORECASE):
                params["site"] = site
                break
        m = _HORIZON_RE.search(text)
        if m:
            params["horizon"] = int(m.group(1))
        cq = classify_and_resolve(Query("plan", text, issued_at))
        if cq.bucket is TemporalBucket.ANCHORED and cq.window is not None:
            w = cq.window
            start = w.start.date()
            end = (w.end - timedelta(microseconds=1)).date() + timedelta(days=1)
            params["start"] = start.isoformat()
            params["end"] = end.isoformat()
            if end - start == timedelta(days=1):
                params["day"] = start.isoformat()
        return params

    def match(self, text: str, params: Mapping[str, Any]) -> Optional[dict]:
        for sc, patterns in zip(self.scenarios, self._compiled):
            if all(p.search(text) for p in patterns) and all(r in params for r in sc["requires"]):
                return sc
        return None

    def guess_domain(self, text: str) -> str:
        for domain, pattern in self.fallback_keywords:
            if pattern.search(text):
                return domain
        return "iot"

    def plan_json(self, text: str, issued_at: datetime) -> dict:
        params = self.extract(text, issued_at)
        sc = self.match(text, params)
        if sc is not None:
            return {"scenario": sc["id"], "steps": [_instantiate(st, params) for st in sc["steps"]]}
        domain = self.guess_domain(text)
        if domain == "wo" and "asset" not in params:
            domain = "iot"
        params.setdefault("site", "MAIN")
        params.setdefault("asset_type", "Chiller")
        return {"scenario": None, "steps": [_instantiate(self.fallback[domain], params)]}


_FIELD_RE = re.compile(r"\{(\w+)\}")


def _fill(value: Any, params: Mapping[str, Any]) -> Any:
    if isinstance(value, str):
        whole = _FIELD_RE.fullmatch(value)
        if whole:
            return params[whole.group(1)]
        return _FIELD_RE.sub(lambda m: str(params[m.group(1)]), value)
    if isinstance(value, dict):
        return {k: _fill(v, params) for k, v in value.items()}
    if isinstance(value, list):
        return [_fill(v, params) for v in value]
    return value


def _instantiate(step: Mapping, params: Mapping[str, Any]) -> dict:
    return {
        "step_id": step["step_id"],
        "server": step["server"],
        "tool": step["tool"],
        "args_template": _fill(step["args"], params),
        "depends_on": list(step["depends_on"]),
    }


def stub_plan_rules(text: str, issued_at: datetime | None = None, rules: ScenarioRules | None = None) -> Plan:
    issued_at = issued_at or parse_instant("2020-06-10T09:00:00Z")
    obj = (rules or _default_rules()).plan_json(text, issued_at)
    return Plan.from_json(obj, "")


_rules: ScenarioRules | None = None


def _default_rules() -> ScenarioRules:
    global _rules
    if _rules is None:
        _rules = ScenarioRules()
    return _rules


def stub_summary(query_text: str, results: Sequence[Mapping]) -> str:
    ok = [r for r in results if r["status"] == "Ok"]
    if not ok:
        lines = [f"Unable to answer: all {len(results)} step(s) failed."]
        for r in results:
            lines.append(f"- step {r['step_id']} {r.get('server')}.{r.get('tool')}: {r['status']}: {r.get('error')}")
        return "\n".join(lines)
    lines = [f"Answer ({len(ok)} of {len(results)} steps ok):"]
    for r in sorted(ok, key=lambda r: r["step_id"]):
        lines.append(f"[{r['step_id']}] {r.get('server')}.{r.get('tool')}: {render_output(r['output'])}")
    failed = [r for r in results if r["status"] != "Ok"]
    for r in failed:
        lines.append(f"[{r['step_id']}] {r['status']}: {r.get('error')}")
    return "\n".join(lines)


class StubModelClient:
    """Deterministic stand-in for the planner and summarizer model.

    ``latency`` and ``summarize_latency`` (seconds) are slept on planning and
    summarization completions to emulate a remote model.
    """

    def __init__(
        self, latency: float = 0.0, summarize_latency: float | None = None, rules: ScenarioRules | None = None
    ):
        self.latency = latency
        self.summarize_latency = latency if summarize_latency is None else summarize_latency
        self.rules = rules or _default_rules()
        self.calls = 0

    def complete(self, prompt: str) -> str:
        self.calls += 1
        delay = self.summarize_latency if prompt.startswith(SUMMARIZE_MARKER) else self.latency
        if delay > 0:
            time.sleep(delay)
        if prompt.startswith(PLAN_MARKER):
            fields = _prompt_fields(prompt)
            issued = parse_instant(fields["ISSUED_AT"])
            obj = self.rules.plan_json(fields["QUERY"], issued)
            return json.dumps({"steps": obj["steps"]}, sort_keys=True)
        if prompt.startswith(SUMMARIZE_MARKER):
            fields = _prompt_fields(prompt)
            results = json.loads(prompt.split("\nRESULTS:\n", 1)[1])
            return stub_summary(fields["QUERY"], results)
        raise ValueError("unrecognized prompt")


def _prompt_fields(prompt: str) -> dict[str, str]:
    out = {}
    for line in prompt.splitlines():
        key, sep, value = line.partition(": ")
        if sep and key.isupper() and key.replace("_", "").isalpha():
            out.setdefault(key, value)
    return out


def scenario_id_for(text: str, issued_at: datetime) -> Optional[str]:
    return _default_rules().plan_json(text, issued_at)["scenario"]


__all__ = [
    "ModelClient",
    "Plan",
    "PlanStep",
    "PlanValidationError",
    "PlanningError",
    "ResolutionError",
    "ScenarioRules",
    "StubModelClient",
    "SummarizationError",
    "find_cycle",
    "load_scenarios",
    "make_plan",
    "make_plan_async",
    "parse_plan",
    "plan_prompt",
    "render_output",
    "resolve_args",
    "scenario_id_for",
    "stub_plan_rules",
    "stub_summary",
    "summarize",
    "summarize_async",
    "summarize_prompt",
    "validate_plan",
]
