"""Reading and writing case files.

Two formats are supported: the subset of MATPOWER ``.m`` case files needed by
the DC model, and the package's canonical JSON (see ``docs/formats.md``).
"""

from __future__ import annotations

import json
import logging
import re
from importlib import resources
from pathlib import Path

import jsonschema

from .network import Branch, Bus, BusKind, CostPoly, Generator, Network, NetworkError

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
SHIPPED_CASES = ("case9", "case14", "case30", "case57", "case118")

# minimum column counts of the MATPOWER version-2 tables we read from
_MIN_COLS = {"bus": 13, "gen": 10, "branch": 11, "gencost": 4}
_STD_COLS = {"bus": 13, "gen": 21, "branch": 13}


class CaseParseError(ValueError):
    """Structured parse failure.

    ``kind`` is one of ``missing-block``, ``non-numeric``, ``bad-shape``,
    ``unsupported-cost``, ``no-slack``, ``multiple-slack``, ``bad-reference``,
    ``invalid-network`` or ``schema``.  ``line`` is 1-based when known;
    ``path`` is the JSON path for schema errors.
    """

    def __init__(self, kind: str, message: str, line: int | None = None, path: str | None = None):
        self.kind = kind
        self.line = line
        self.path = path
        where = f" (line {line})" if line is not None else ""
        where += f" at {path}" if path is not None else ""
        super().__init__(f"{kind}: {message}{where}")


_SCALAR_RE = re.compile(r"mpc\.baseMVA\s*=\s*([^;]+);")
_BLOCK_START_RE = re.compile(r"mpc\.(\w+)\s*=\s*\[")


def _strip_comment(line: str) -> str:
    pos = line.find("%")
    return line if pos < 0 else line[:pos]


def _read_blocks(text: str) -> tuple[dict, dict]:
    """Return ``{name: [(line_no, [tokens...]), ...]}`` and the start line of each block."""
    lines = text.splitlines()
    blocks: dict[str, list] = {}
    starts: dict[str, int] = {}
    k = 0
    while k < len(lines):
        code = _strip_comment(lines[k])
        m = _BLOCK_START_RE.search(code)
        if not m:
            k += 1
            continue
        name = m.group(1)
        starts[name] = k + 1
        rows: list = []
        rest = code[m.end():]
        line_no = k + 1
        closed = False
        while True:
            end = rest.find("]")
            chunk = rest if end < 0 else rest[:end]
            for part in chunk.split(";"):
                toks = part.replace(",", " ").split()
                if toks:
                    rows.append((line_no, toks))
            if end >= 0:
                closed = True
                break
            k += 1
            if k >= len(lines):
                break
            rest = _strip_comment(lines[k])
            line_no = k + 1
        if not closed:
            raise CaseParseError("bad-shape", f"block mpc.{name} is not closed", line=starts[name])
        blocks[name] = rows
        k += 1
    return blocks, starts


def _numeric_table(name: str, rows: list, start: int) -> list[list[float]]:
    table = []
    width = None
    for line_no, toks in rows:
        vals = []
        for tok in toks:
            try:
                vals.append(float(tok))
            except ValueError:
                raise CaseParseError("non-numeric", f"mpc.{name}: cannot read {tok!r}", line=line_no) from None
        if width is None:
            width = len(vals)
        elif len(vals) != width:
            raise CaseParseError("bad-shape", f"mpc.{name}: ragged row ({len(vals)} vs {width} columns)", line=line_no)
        table.append(vals)
    if not table:
        raise CaseParseError("missing-block", f"mpc.{name} is empty", line=start)
    min_cols = _MIN_COLS.get(name, 1)
    if width < min_cols:
        raise CaseParseError("bad-shape", f"mpc.{name} needs >= {min_cols} columns, has {width}", line=start)
    if name in _STD_COLS and width > _STD_COLS[name]:
        logger.warning("mpc.%s: ignoring %d extra column(s)", name, width - _STD_COLS[name])
    return table


def parse_matpower(text: str, name: str = "case") -> Network:
    """Parse the MATPOWER blocks the DC model needs into a :class:`Network`.

    Out-of-service generators and branches are dropped.  ``RATE_A == 0`` marks an
    unlimited branch.  Only polynomial costs with exactly three coefficients are
    accepted.
    """
    m = _SCALAR_RE.search("\n".join(_strip_comment(ln) for ln in text.splitlines()))
    if m is None:
        raise CaseParseError("missing-block", "mpc.baseMVA not found")
    try:
        base_mva = float(m.group(1))
    except ValueError:
        line = text[: text.find("mpc.baseMVA")].count("\n") + 1
        raise CaseParseError("non-numeric", f"baseMVA {m.group(1).strip()!r}", line=line) from None

    blocks, starts = _read_blocks(text)
    tables = {}
    for key in ("bus", "gen", "branch", "gencost"):
        if key not in blocks:
            raise CaseParseError("missing-block", f"mpc.{key} not found")
        tables[key] = _numeric_table(key, blocks[key], starts[key])
    row_lines = {key: [ln for ln, _ in blocks[key]] for key in tables}

    buses_raw = tables["bus"]
    slack_rows = [k for k, r in enumerate(buses_raw) if int(r[1]) == 3]
    if not slack_rows:
        raise CaseParseError("no-slack", "no bus of type 3", line=starts["bus"])
    if len(slack_rows) > 1:
        raise CaseParseError("multiple-slack", f"{len(slack_rows)} buses of type 3", line=row_lines["bus"][slack_rows[1]])
    bus_ids = [int(r[0]) for r in buses_raw]
    known = set(bus_ids)

    gen_raw = tables["gen"]
    cost_raw = tables["gencost"]
    if len(cost_raw) < len(gen_raw):
        raise CaseParseError("bad-shape", f"{len(cost_raw)} gencost rows for {len(gen_raw)} generators", line=starts["gencost"])
    generators = []
    for k, row in enumerate(gen_raw):
        line = row_lines["gen"][k]
        if int(row[0]) not in known:
            raise CaseParseError("bad-reference", f"generator on unknown bus {int(row[0])}", line=line)
        crow = cost_raw[k]
        cline = row_lines["gencost"][k]
        if int(crow[0]) != 2 or int(crow[3]) != 3:
            raise CaseParseError("unsupported-cost", f"need MODEL=2, NCOST=3, got MODEL={crow[0]:g}, NCOST={crow[3]:g}", line=cline)
        if len(crow) < 7:
            raise CaseParseError("bad-shape", "gencost row has fewer than 3 coefficients", line=cline)
        if len(row) < 8 or row[7] <= 0:
            continue
        generators.append(
            Generator(
                bus_id=int(row[0]),
                p_min_mw=row[9],
                p_max_mw=row[8],
                cost=CostPoly(c2=crow[4], c1=crow[5], c0=crow[6]),
            )
        )
    gen_buses = {g.bus_id for g in generators}

    branches = []
    for k, row in enumerate(tables["branch"]):
        line = row_lines["branch"][k]
        f, t = int(row[0]), int(row[1])
        if f not in known or t not in known:
            raise CaseParseError("bad-reference", f"branch {f}-{t} refers to an unknown bus", line=line)
        if row[10] <= 0:
            continue
        rate = row[5]
        branches.append(Branch(from_bus=f, to_bus=t, reactance_pu=row[3], flow_limit_mw=None if rate == 0 else rate))

    buses = []
    for row in buses_raw:
        bid = int(row[0])
        if int(row[1]) == 3:
            kind = BusKind.SLACK
        elif bid in gen_buses:
            kind = BusKind.GENERATOR
        else:
            kind = BusKind.LOAD_ONLY
        buses.append(Bus(id=bid, kind=kind, base_load_mw=row[2]))

    try:
        return Network(base_mva=base_mva, buses=buses, generators=generators, branches=branches, name=name)
    except NetworkError as exc:
        raise CaseParseError("invalid-network", str(exc)) from exc


# ---------------------------------------------------------------------------
# canonical JSON

_NUM = {"type": "number"}
CASE_SCHEMA = {
    "type": "object",
    "required": ["schema_version", "base_mva", "buses", "generators", "branches"],
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "name": {"type": "string"},
        "base_mva": {"type": "number", "exclusiveMinimum": 0},
        "buses": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "required": ["id", "kind", "base_load_mw"],
                "additionalProperties": False,
                "properties": {
                    "id": {"type": "integer"},
                    "kind": {"enum": [k.value for k in BusKind]},
                    "base_load_mw": _NUM,
                },
            },
        },
        "generators": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["bus_id", "p_min_mw", "p_max_mw", "cost"],
                "additionalProperties": False,
                "properties": {
                    "bus_id": {"type": "integer"},
                    "p_min_mw": _NUM,
                    "p_max_mw": _NUM,
                    "cost": {
                        "type": "object",
                        "required": ["c2", "c1", "c0"],
                        "additionalProperties": False,
                        "properties": {"c2": _NUM, "c1": _NUM, "c0": _NUM},
                    },
                },
            },
        },
        "branches": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["from_bus", "to_bus", "reactance_pu", "flow_limit_mw"],
                "additionalProperties": False,
                "properties": {
                    "from_bus": {"type": "integer"},
                    "to_bus": {"type": "integer"},
                    "reactance_pu": _NUM,
                    "flow_limit_mw": {"type": ["number", "null"]},
                },
            },
        },
    },
}


def network_to_dict(net: Network) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "name": net.name,
        "base_mva": net.base_mva,
        "buses": [{"id": b.id, "kind": b.kind.value, "base_load_mw": b.base_load_mw} for b in net.buses],
        "generators": [
            {
                "bus_id": g.bus_id,
                "p_min_mw": g.p_min_mw,
                "p_max_mw": g.p_max_mw,
                "cost": {"c2": g.cost.c2, "c1": g.cost.c1, "c0": g.cost.c0},
            }
            for g in net.generators
        ],
        "branches": [
            {
                "from_bus": br.from_bus,
                "to_bus": br.to_bus,
                "reactance_pu": br.reactance_pu,
                "flow_limit_mw": br.flow_limit_mw,
            }
            for br in net.branches
        ],
    }


def _json_path(err: jsonschema.ValidationError) -> str:
    path = "$"
    for part in err.absolute_path:
        path += f"[{part}]" if isinstance(part, int) else f".{part}"
    return path


def network_from_dict(data) -> Network:
    try:
        jsonschema.validate(data, CASE_SCHEMA)
    except jsonschema.ValidationError as exc:
        raise CaseParseError("schema", exc.message, path=_json_path(exc)) from None
    f = float
    try:
        return Network(
            base_mva=f(data["base_mva"]),
            name=data.get("name", "case"),
            buses=[Bus(id=b["id"], kind=BusKind(b["kind"]), base_load_mw=f(b["base_load_mw"])) for b in data["buses"]],
            generators=[
                Generator(
                    bus_id=g["bus_id"],
                    p_min_mw=f(g["p_min_mw"]),
                    p_max_mw=f(g["p_max_mw"]),
                    cost=CostPoly(f(g["cost"]["c2"]), f(g["cost"]["c1"]), f(g["cost"]["c0"])),
                )
                for g in data["generators"]
            ],
            branches=[
                Branch(
                    from_bus=br["from_bus"],
                    to_bus=br["to_bus"],
                    reactance_pu=f(br["reactance_pu"]),
                    flow_limit_mw=None if br["flow_limit_mw"] is None else f(br["flow_limit_mw"]),
                )
                for br in data["branches"]
            ],
        )
    except NetworkError as exc:
        raise CaseParseError("invalid-network", str(exc)) from exc


def write_json(net: Network) -> str:
    return json.dumps(network_to_dict(net), indent=1)


def parse_json(text: str) -> Network:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CaseParseError("schema", exc.msg, line=exc.lineno, path="$") from None
    return network_from_dict(data)


def load_case(spec: str | Path) -> Network:
    """Load a shipped case by name (``"case30"``) or a ``.m`` / ``.json`` file."""
    spec_str = str(spec)
    if spec_str in SHIPPED_CASES:
        text = resources.files("dcopf_nn.cases").joinpath(f"{spec_str}.m").read_text()
        return parse_matpower(text, name=spec_str)
    path = Path(spec)
    if not path.exists():
        raise FileNotFoundError(f"no such case file or shipped case: {spec_str}")
    text = path.read_text()
    if path.suffix.lower() == ".json":
        return parse_json(text)
    return parse_matpower(text, name=path.stem)
