"""Simulated MCP domain server speaking newline-delimited JSON-RPC 2.0 on stdio.

Usage: python -S launch.py {iot,fmsr,tsfm,wo}   (or run this file directly)

Self-contained on purpose: it is spawned once per step in the sequential
baseline, so it imports only what it needs and loads data tables lazily.

Environment:
  TEMPO_SIM_LATENCY_MS  artificial delay added to every tools/call (default 0)
  TEMPO_SIM_SPAWN_MS    artificial startup delay before serving (default 0)
  TEMPO_SIM_SEED        seed for generated readings (default 0)
  TEMPO_SIM_DATA_DIR    directory holding the CSV tables (default: ./data)
  TEMPO_SIM_MANIFEST    override the manifest file for this domain
  TEMPO_SIM_FAIL        if "1", every tools/call returns a JSON-RPC error
  TEMPO_SIM_LOG         append one JSON line per request (receive/finish times)
"""

import _csv
import _json
import os
import sys
import time

HERE = os.path.dirname(os.path.abspath(__file__))
DOMAINS = ("iot", "fmsr", "tsfm", "wo")

PARSE_ERROR = -32700
INVALID_REQUEST = -32600
METHOD_NOT_FOUND = -32601
INVALID_PARAMS = -32602
TOOL_ERROR = -32000


class RpcError(Exception):
    def __init__(self, code, message):
        super().__init__(message)
        self.code = code
        self.message = message


# The json and csv packages pull in re, which roughly doubles interpreter
# startup. The C accelerators underneath them are enough here.


class _DecodeContext:
    strict = True
    object_hook = None
    object_pairs_hook = None
    parse_float = float
    parse_int = int
    parse_constant = float


_scan = _json.make_scanner(_DecodeContext())
_WS = " \t\n\r"


def loads(text):
    i = len(text) - len(text.lstrip(_WS))
    try:
        obj, end = _scan(text, i)
    except StopIteration:
        raise ValueError("invalid JSON at offset %d" % i) from None
    if text[end:].strip(_WS):
        raise ValueError("extra data at offset %d" % end)
    return obj


def _no_default(o):
    raise TypeError("not JSON serializable: %r" % type(o).__name__)


_encoders = {}


def dumps(obj, sort_keys=False):
    enc = _encoders.get(sort_keys)
    if enc is None:
        enc = _json.make_encoder({}, _no_default, _json.encode_basestring_ascii, None, ":", ",", sort_keys, False, True)
        _encoders[sort_keys] = enc
    return "".join(enc(obj, 0))


def _env_float(name, default=0.0):
    raw = os.environ.get(name, "")
    return float(raw) if raw.strip() else default


# --------------------------------------------------------------------------
# Data tables

_tables = {}


def table(name):
    if name not in _tables:
        data_dir = os.environ.get("TEMPO_SIM_DATA_DIR") or os.path.join(HERE, "data")
        with open(os.path.join(data_dir, name + ".csv"), newline="", encoding="utf-8") as fh:
            rows = _csv.reader(fh)
            header = next(rows)
            _tables[name] = [dict(zip(header, r)) for r in rows if r]
    return _tables[name]


def _unit_hash(*parts):
    """Uniform value in [0, 1) derived from the seed and ``parts``."""
    from zlib import crc32

    seed = os.environ.get("TEMPO_SIM_SEED", "0")
    key = "|".join((seed,) + tuple(str(p) for p in parts)).encode("utf-8")
    hi, lo = crc32(key), crc32(key, 0x9E3779B9)
    return ((hi << 20) ^ (lo & 0xFFFFF)) / float(1 << 52)


def _digest(text):
    from zlib import crc32

    return "%08x" % crc32(text.encode("utf-8"))


def _norm(s):
    return " ".join(str(s).split()).lower()


def _asset(name):
    for row in table("assets"):
        if _norm(row["asset"]) == _norm(name):
            return row
    raise RpcError(TOOL_ERROR, "unknown asset: %s" % name)


def _sensor(asset_row, sensor):
    for row in table("sensors"):
        if row["asset_type"] == asset_row["asset_type"] and _norm(row["sensor"]) == _norm(sensor):
            return row
    raise RpcError(TOOL_ERROR, "asset %s has no sensor %s" % (asset_row["asset"], sensor))


def _asset_type(name):
    for row in table("assets"):
        if _norm(row["asset_type"]) == _norm(name):
            return row["asset_type"]
    raise RpcError(TOOL_ERROR, "unknown asset type: %s" % name)


def _day(s, field):
    import datetime as dt

    try:
        return dt.date.fromisoformat(s)
    except (TypeError, ValueError):
        raise RpcError(INVALID_PARAMS, "%s must be YYYY-MM-DD, got %r" % (field, s))


def _reading(asset_row, sensor_row, day):
    nominal = float(sensor_row["nominal"])
    spread = float(sensor_row["spread"])
    u = _unit_hash(asset_row["asset"], sensor_row["sensor"], day)
    return round(nominal + spread * (2.0 * u - 1.0), 3)


def _days(start, end, limit=92):
    import datetime as dt

    lo, hi = _day(start, "start"), _day(end, "end")
    if hi <= lo:
        raise RpcError(INVALID_PARAMS, "end must be after start")
    n = (hi - lo).days
    if n > limit:
        raise RpcError(INVALID_PARAMS, "window longer than %d days" % limit)
    return [(lo + dt.timedelta(days=i)).isoformat() for i in range(n)]


# --------------------------------------------------------------------------
# Tools: pure functions of (args, seed, data tables)


def iot_list_assets(args):
    site = args.get("site", "MAIN")
    assets = [r["asset"] for r in table("assets") if _norm(r["site"]) == _norm(site)]
    return {"site": site.upper(), "assets": assets}


def iot_list_sensors(args):
    a = _asset(args["asset"])
    sensors = [
        {"sensor": r["sensor"], "unit": r["unit"]} for r in table("sensors") if r["asset_type"] == a["asset_type"]
    ]
    return {"asset": a["asset"], "sensors": sensors}


def iot_get_sensor_reading(args):
    a = _asset(args["asset"])
    s = _sensor(a, args["sensor"])
    day = _day(args["day"], "day").isoformat()
    return {"asset": a["asset"], "sensor": s["sensor"], "day": day, "value": _reading(a, s, day), "unit": s["unit"]}


def iot_get_sensor_history(args):
    a = _asset(args["asset"])
    s = _sensor(a, args["sensor"])
    values = [{"day": d, "value": _reading(a, s, d)} for d in _days(args["start"], args["end"])]
    return {"asset": a["asset"], "sensor": s["sensor"], "unit": s["unit"], "readings": values}


def iot_get_asset_status(args):
    a = _asset(args["asset"])
    u = _unit_hash("status", a["asset"])
    state = "running" if u < 0.7 else ("standby" if u < 0.9 else "alarm")
    return {"asset": a["asset"], "state": state, "load_pct": round(100 * u, 1)}


def fmsr_list_failure_modes(args):
    at = _asset_type(args["asset_type"])
    return {"asset_type": at, "failure_modes": [r["failure_mode"] for r in table("failure_modes") if r["asset_type"] == at]}


def fmsr_get_failure_sensor_map(args):
    at = _asset_type(args["asset_type"])
    mapping = {r["failure_mode"]: r["sensors"].split(";") for r in table("failure_modes") if r["asset_type"] == at}
    return {"asset_type": at, "mapping": mapping}


def fmsr_failure_modes_for_sensor(args):
    at = _asset_type(args["asset_type"])
    sensor = _norm(args["sensor"])
    modes = [
        r["failure_mode"]
        for r in table("failure_modes")
        if r["asset_type"] == at and sensor in [_norm(x) for x in r["sensors"].split(";")]
    ]
    return {"asset_type": at, "sensor": args["sensor"], "failure_modes": modes}


def fmsr_recommend_sensors(args):
    at = _asset_type(args["asset_type"])
    fm = _norm(args["failure_mode"])
    for r in table("failure_modes"):
        if r["asset_type"] == at and _norm(r["failure_mode"]) == fm:
            return {"asset_type": at, "failure_mode": r["failure_mode"], "sensors": r["sensors"].split(";")}
    raise RpcError(TOOL_ERROR, "unknown failure mode for %s: %s" % (at, args["failure_mode"]))


def tsfm_list_models(args):
    at = args.get("asset_type")
    rows = table("models")
    if at:
        at = _asset_type(at)
        rows = [r for r in rows if at in r["asset_types"].split(";")]
    return {"models": [{"model": r["model"], "max_horizon_days": int(r["max_horizon_days"])} for r in rows]}


def tsfm_forecast(args):
    a = _asset(args["asset"])
    s = _sensor(a, args["sensor"])
    horizon = args.get("horizon_days", 7)
    if not isinstance(horizon, int) or isinstance(horizon, bool) or not 1 <= horizon <= 30:
        raise RpcError(INVALID_PARAMS, "horizon_days must be an integer in [1, 30]")
    base = float(s["nominal"])
    spread = float(s["spread"])
    points = [round(base + 0.5 * spread * (2 * _unit_hash("fc", a["asset"], s["sensor"], h) - 1), 3) for h in range(horizon)]
    return {"asset": a["asset"], "sensor": s["sensor"], "model": "ttm-sim-r1", "forecast": points}


def tsfm_detect_anomalies(args):
    a = _asset(args["asset"])
    s = _sensor(a, args["sensor"])
    nominal = float(s["nominal"])
    spread = float(s["spread"])
    flagged = []
    for d in _days(args["start"], args["end"]):
        v = _reading(a, s, d)
        if abs(v - nominal) > 0.8 * spread:
            flagged.append({"day": d, "value": v})
    return {"asset": a["asset"], "sensor": s["sensor"], "anomalies": flagged}


def _wo_public(r):
    return {k: r[k] for k in ("wo_id", "asset", "status", "created", "priority", "description")}


def wo_get_work_order(args):
    wo_id = args["wo_id"].upper()
    for r in table("work_orders"):
        if r["wo_id"] == wo_id:
            return _wo_public(r)
    raise RpcError(TOOL_ERROR, "unknown work order: %s" % args["wo_id"])


def wo_list_work_orders(args):
    a = _asset(args["asset"])
    return {"asset": a["asset"], "work_orders": [_wo_public(r) for r in table("work_orders") if r["asset"] == a["asset"]]}


def wo_work_order_stats(args):
    a = _asset(args["asset"])
    counts = {}
    for r in table("work_orders"):
        if r["asset"] == a["asset"]:
            counts[r["status"]] = counts.get(r["status"], 0) + 1
    return {"asset": a["asset"], "by_status": dict(sorted(counts.items())), "total": sum(counts.values())}


TOOLS = {
    "iot": {
        "list_assets": iot_list_assets,
        "list_sensors": iot_list_sensors,
        "get_sensor_reading": iot_get_sensor_reading,
        "get_sensor_history": iot_get_sensor_history,
        "get_asset_status": iot_get_asset_status,
    },
    "fmsr": {
        "list_failure_modes": fmsr_list_failure_modes,
        "get_failure_sensor_map": fmsr_get_failure_sensor_map,
        "failure_modes_for_sensor": fmsr_failure_modes_for_sensor,
        "recommend_sensors": fmsr_recommend_sensors,
    },
    "tsfm": {
        "list_models": tsfm_list_models,
        "forecast": tsfm_forecast,
        "detect_anomalies": tsfm_detect_anomalies,
    },
    "wo": {
        "get_work_order": wo_get_work_order,
        "list_work_orders": wo_list_work_orders,
        "work_order_stats": wo_work_order_stats,
    },
}

_JSON_TYPES = {"string": str, "integer": int, "object": dict, "array": list, "boolean": bool}


def check_args(schema, args):
    if not isinstance(args, dict):
        raise RpcError(INVALID_PARAMS, "arguments must be an object")
    for name in schema.get("required", []):
        if name not in args:
            raise RpcError(INVALID_PARAMS, "missing required argument: %s" % name)
    for name, prop in schema.get("properties", {}).items():
        if name in args and "type" in prop:
            want = _JSON_TYPES.get(prop["type"])
            v = args[name]
            if want is int and isinstance(v, bool):
                raise RpcError(INVALID_PARAMS, "argument %s must be %s" % (name, prop["type"]))
            if want is not None and not isinstance(v, want):
                raise RpcError(INVALID_PARAMS, "argument %s must be %s" % (name, prop["type"]))


# --------------------------------------------------------------------------
# Server loop


class Server:
    def __init__(self, domain):
        self.domain = domain
        self.latency = _env_float("TEMPO_SIM_LATENCY_MS") / 1000.0
        self.fail = os.environ.get("TEMPO_SIM_FAIL") == "1"
        path = os.environ.get("TEMPO_SIM_MANIFEST") or os.path.join(HERE, "manifests", domain + ".json")
        with open(path, encoding="utf-8") as fh:
            self.manifest = loads(fh.read())
        self.schemas = {t["name"]: t.get("inputSchema", {}) for t in self.manifest}
        log_path = os.environ.get("TEMPO_SIM_LOG")
        self.log = open(log_path, "a", encoding="utf-8") if log_path else None

    def handle(self, msg):
        method = msg.get("method")
        params = msg.get("params") or {}
        if method == "initialize":
            return {
                "protocolVersion": "2024-11-05",
                "serverInfo": {"name": "sim-" + self.domain, "version": "1.0"},
                "capabilities": {"tools": {}},
            }
        if method == "tools/list":
            return {"tools": self.manifest}
        if method == "tools/call":
            if not isinstance(params, dict):
                raise RpcError(INVALID_PARAMS, "params must be an object")
            if self.latency > 0:
                time.sleep(self.latency)
            name = params.get("name")
            fn = TOOLS[self.domain].get(name)
            if fn is None or name not in self.schemas:
                raise RpcError(INVALID_PARAMS, "unknown tool: %s" % name)
            if self.fail:
                raise RpcError(TOOL_ERROR, "server %s configured to fail" % self.domain)
            args = params.get("arguments") or {}
            check_args(self.schemas[name], args)
            payload = fn(args)
            context = args.get("context")
            if context:
                payload["based_on"] = _digest(context)
            text = dumps(payload, sort_keys=True)
            return {"content": [{"type": "text", "text": text}], "structuredContent": payload, "isError": False}
        raise RpcError(METHOD_NOT_FOUND, "method not found: %s" % method)

    def respond(self, line):
        try:
            msg = loads(line)
        except ValueError:
            return {"jsonrpc": "2.0", "id": None, "error": {"code": PARSE_ERROR, "message": "parse error"}}
        if not isinstance(msg, dict) or msg.get("jsonrpc") != "2.0" or "method" not in msg:
            rid = msg.get("id") if isinstance(msg, dict) else None
            return {"jsonrpc": "2.0", "id": rid, "error": {"code": INVALID_REQUEST, "message": "invalid request"}}
        if "id" not in msg:
            return None  # notification
        t_recv = time.monotonic()
        try:
            out = {"jsonrpc": "2.0", "id": msg["id"], "result": self.handle(msg)}
        except RpcError as exc:
            out = {"jsonrpc": "2.0", "id": msg["id"], "error": {"code": exc.code, "message": exc.message}}
        except (KeyError, TypeError, ValueError) as exc:
            out = {"jsonrpc": "2.0", "id": msg["id"], "error": {"code": INVALID_PARAMS, "message": "invalid params: %s" % exc}}
        if self.log is not None:
            params = msg.get("params") if isinstance(msg.get("params"), dict) else {}
            record = {
                "server": self.domain,
                "pid": os.getpid(),
                "id": msg["id"],
                "method": msg["method"],
                "tool": params.get("name"),
                "t_recv": t_recv,
                "t_done": time.monotonic(),
            }
            self.log.write(dumps(record) + "\n")
            self.log.flush()
        return out

    def serve(self, stdin, stdout):
        for raw in stdin:
            line = raw.strip()
            if not line:
                continue
            out = self.respond(line)
            if out is not None:
                stdout.write(dumps(out) + "\n")
                stdout.flush()


def main(argv=None):
    argv = sys.argv[1:] if argv is None else argv
    if len(argv) != 1 or argv[0] not in DOMAINS:
        sys.stderr.write("usage: sim_server.py {%s}\n" % ",".join(DOMAINS))
        return 2
    spawn = _env_float("TEMPO_SIM_SPAWN_MS") / 1000.0
    if spawn > 0:
        time.sleep(spawn)
    Server(argv[0]).serve(sys.stdin, sys.stdout)
    return 0


if __name__ == "__main__":
    sys.exit(main())
