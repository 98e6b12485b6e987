"""Command-line front end.

The CLI is a thin client of the compute service: it builds request
payloads from a config file plus flag overrides, calls the service (an
in-process ASGI instance by default, or a remote one via --server), and
emits result files.  All JSON output is byte-deterministic for a fixed
config and seed: keys sorted, floats in shortest round-trip form.

Exit codes: 0 success, 1 I/O or validation errors, 2 geometry violations,
3 semantic failures (unresolved orbit searches, no stable resonance,
identity defect above threshold).
"""

from __future__ import annotations

import argparse
import asyncio
import csv
import dataclasses
import json
import os
import sys
from typing import Optional

import httpx

SCHEMA_VERSION = 1
IDENTITY_THRESHOLD = 1e-3


@dataclasses.dataclass
class RunConfig:
    """One self-describing run configuration; flags override single keys."""

    obstacles: str = ""
    grazing_tol: float = 1e-9
    newton_tol: float = 1e-12
    r_dom: Optional[float] = None
    max_len: int = 8
    max_rep: int = 200
    tail_tol: float = 1e-16
    region: tuple[float, float, float, float] = (-1.0, -1e-3, -1.0, 1.0)
    weight_re: str = "1"
    weight_im: Optional[str] = None
    reflection_factor: tuple[float, float] = (1.0, 0.0)
    out_dir: str = "out"
    rng_seed: int = 0

    @classmethod
    def from_file(cls, path: str) -> "RunConfig":
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
        if raw.get("schema_version") != SCHEMA_VERSION:
            raise ValueError(f"config schema_version must be {SCHEMA_VERSION}")
        cfg = cls()
        cfg.obstacles = raw.get("obstacles", cfg.obstacles)
        cfg.grazing_tol = float(raw.get("grazing_tol", cfg.grazing_tol))
        cfg.newton_tol = float(raw.get("newton_tol", cfg.newton_tol))
        if raw.get("r_dom") is not None:
            cfg.r_dom = float(raw["r_dom"])
        zeta = raw.get("zeta", {})
        cfg.max_len = int(zeta.get("max_len", cfg.max_len))
        cfg.max_rep = int(zeta.get("max_rep", cfg.max_rep))
        cfg.tail_tol = float(zeta.get("tail_tol", cfg.tail_tol))
        region = raw.get("region")
        if region is not None:
            cfg.region = (float(region["re_min"]), float(region["re_max"]),
                          float(region["im_min"]), float(region["im_max"]))
        weight = raw.get("weight", {})
        cfg.weight_re = str(weight.get("re", cfg.weight_re))
        cfg.weight_im = weight.get("im", cfg.weight_im)
        factor = weight.get("reflection_factor")
        if factor is not None:
            cfg.reflection_factor = (float(factor[0]), float(factor[1]))
        cfg.out_dir = raw.get("out_dir", cfg.out_dir)
        cfg.rng_seed = int(raw.get("rng_seed", cfg.rng_seed))
        cfg.validate()
        return cfg

    def validate(self) -> None:
        if not (self.grazing_tol > 0 and self.newton_tol > 0):
            raise ValueError("tolerances must be positive")
        if self.max_len < 2 or self.max_rep < 1:
            raise ValueError("max_len must be >= 2 and max_rep >= 1")
        if self.r_dom is not None and self.r_dom <= 0:
            raise ValueError("r_dom must be positive")
        re0, re1, im0, im1 = self.region
        if not (re0 < re1 and im0 < im1):
            raise ValueError("region must have positive extent")


class CliError(Exception):
    def __init__(self, message: str, exit_code: int = 1):
        super().__init__(message)
        self.exit_code = exit_code


# --- service transport ----------------------------------------------------------

class ServiceClient:
    """POSTs to a remote service, or to the in-process app when no URL given."""

    def __init__(self, server: Optional[str]):
        self.server = server.rstrip("/") if server else None

    def post(self, path: str, payload: dict) -> dict:
        if self.server:
            response = httpx.post(self.server + path, json=payload, timeout=3600.0)
        else:
            response = asyncio.run(self._post_in_process(path, payload))
        if response.status_code >= 400:
            try:
                detail = response.json().get("detail", response.text)
            except Exception:
                detail = response.text
            raise CliError(f"service error on {path}: {detail}", exit_code=1)
        return response.json()

    async def _post_in_process(self, path: str, payload: dict) -> httpx.Response:
        from .service.app import app

        transport = httpx.ASGITransport(app=app)
        async with httpx.AsyncClient(transport=transport,
                                     base_url="http://ndisk.local") as client:
            return await client.post(path, json=payload, timeout=3600.0)


# --- emission helpers -------------------------------------------------------------

def _write_json(path: str, payload: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)
        fh.write("\n")


def _write_csv(path: str, header: list[str], rows: list[list]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(v) if isinstance(v, float) else v for v in row])


def _load_discs(cfg: RunConfig) -> list[dict]:
    if not cfg.obstacles:
        raise CliError("no obstacle file configured (key 'obstacles' or --obstacles)")
    try:
        with open(cfg.obstacles, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise CliError(f"cannot read obstacle file: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise CliError(f"obstacle file is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict) or not isinstance(raw.get("discs"), list) or not raw["discs"]:
        raise CliError('obstacle file must be {"discs": [{"center": [x, y], "radius": r}, ...]}')
    discs = []
    for idx, entry in enumerate(raw["discs"]):
        try:
            center = entry["center"]
            radius = float(entry["radius"])
        except (TypeError, KeyError, ValueError) as exc:
            raise CliError(f"disc {idx + 1}: malformed entry ({exc})") from exc
        if len(center) != 2 or radius <= 0:
            raise CliError(f"disc {idx + 1}: center must be [x, y] and radius positive")
        discs.append({"center": [float(center[0]), float(center[1])], "radius": radius})
    return discs


def _out_path(cfg: RunConfig, name: str) -> str:
    os.makedirs(cfg.out_dir, exist_ok=True)
    return os.path.join(cfg.out_dir, name)


def _weight_payload(cfg: RunConfig) -> dict:
    return {"re": cfg.weight_re, "im": cfg.weight_im,
            "reflection_factor": list(cfg.reflection_factor)}


def _zeta_payload(cfg: RunConfig) -> dict:
    return {"max_len": cfg.max_len, "max_rep": cfg.max_rep, "tail_tol": cfg.tail_tol}


def _tolerances_payload(cfg: RunConfig) -> dict:
    return {"grazing_tol": cfg.grazing_tol, "newton_tol": cfg.newton_tol}


# --- commands ----------------------------------------------------------------------

def cmd_geometry_check(cfg: RunConfig, client: ServiceClient, args) -> int:
    discs = _load_discs(cfg)
    report = client.post("/geometry/check", {"discs": discs})
    payload = {"schema_version": SCHEMA_VERSION, **report}
    _write_json(_out_path(cfg, "geometry.json"), payload)
    print(f"disjoint: {'ok' if report['disjoint_ok'] else 'VIOLATED'}")
    print(f"no-eclipse: {'ok' if report['no_eclipse_ok'] else 'VIOLATED'}")
    for triple in report["violations"]:
        print(f"  violation (i, j, k) = {tuple(triple)}")
    if report["first_violation"]:
        print(f"  {report['first_violation']}")
    return 0 if (report["disjoint_ok"] and report["no_eclipse_ok"]) else 2


def cmd_simulate(cfg: RunConfig, client: ServiceClient, args) -> int:
    discs = _load_discs(cfg)
    if args.time is not None:
        until = {"kind": "time", "value": args.time}
    elif args.bounces is not None:
        until = {"kind": "bounces", "value": args.bounces}
    else:
        until = {"kind": "escape", "value": args.escape_radius}
    payload = {
        "discs": discs,
        "state": {"x": args.state[:2], "v": args.state[2:]},
        "until": until,
        "tolerances": _tolerances_payload(cfg),
        "r_dom": cfg.r_dom,
    }
    result = client.post("/simulate", payload)
    _write_json(_out_path(cfg, "flow.json"),
                {"schema_version": SCHEMA_VERSION, "rng_seed": cfg.rng_seed, **result})
    rows = [[0.0, args.state[0], args.state[1]]]
    for coll in result["collisions"]:
        rows.append([coll["time"], coll["point"][0], coll["point"][1]])
    rows.append([result["elapsed"], result["final"]["x"][0], result["final"]["x"][1]])
    _write_csv(_out_path(cfg, "trajectory.csv"), ["t", "x", "y"], rows)
    summary = (f"termination={result['termination']} elapsed={result['elapsed']:.6g} "
               f"bounces={len(result['collisions'])}")
    print(summary, file=sys.stderr)
    return 0


def cmd_orbits(cfg: RunConfig, client: ServiceClient, args) -> int:
    discs = _load_discs(cfg)
    payload = {"discs": discs, "max_len": cfg.max_len,
               "tolerances": _tolerances_payload(cfg)}
    result = client.post("/orbits/build", payload)
    import datetime

    header = {
        "schema": "ndisk-orbit-db-1",
        "set_hash": result["set_hash"],
        "max_len": result["max_len"],
        "newton_tol": result["newton_tol"],
        "grazing_tol": result["grazing_tol"],
        "created_at": datetime.datetime.now(datetime.timezone.utc).isoformat(),
        "pruned": result["pruned"],
        "failed": result["failed"],
    }
    with open(_out_path(cfg, "orbits.jsonl"), "w", encoding="utf-8") as fh:
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for row in result["orbits"]:
            line = {
                "itinerary": row["itinerary"],
                "thetas": row["thetas"],
                "T_prim": row["T_prim"],
                "trace": row["trace"],
                "Lambda": row["Lambda"],
                "residual": row["residual"],
                "set_hash": row["set_hash"],
            }
            fh.write(json.dumps(line, sort_keys=True) + "\n")
    _write_csv(
        _out_path(cfg, "orbits_summary.csv"),
        ["itinerary", "T_prim", "abs_Lambda", "residual"],
        [[row["itinerary"], row["T_prim"], row["abs_Lambda"], row["residual"]]
         for row in result["orbits"]],
    )
    _write_json(_out_path(cfg, "orbits.json"), {
        "schema_version": SCHEMA_VERSION,
        "rng_seed": cfg.rng_seed,
        "set_hash": result["set_hash"],
        "counts_by_length": result["counts_by_length"],
        "found": len(result["orbits"]),
        "pruned": result["pruned"],
        "failed": result["failed"],
    })
    print(f"found {len(result['orbits'])} orbits, "
          f"pruned {len(result['pruned'])}, failed {len(result['failed'])}")
    return 3 if result["failed"] else 0


def cmd_resonances(cfg: RunConfig, client: ServiceClient, args) -> int:
    discs = _load_discs(cfg)
    re0, re1, im0, im1 = cfg.region
    payload = {
        "discs": discs,
        "region": {"re_min": re0, "re_max": re1, "im_min": im0, "im_max": im1},
        "zeta": _zeta_payload(cfg),
        "tolerances": _tolerances_payload(cfg),
        "rng_seed": cfg.rng_seed,
    }
    if args.dump_det_grid is not None:
        payload["dump_grid"] = args.dump_det_grid
    result = client.post("/resonances/find", payload)
    rows = [[r["re"], r["im"], r["residue_re"], r["residue_im"], r["residual"],
             r["stable"]] for r in result["resonances"]]
    _write_csv(_out_path(cfg, "resonances.csv"),
               ["re", "im", "residue_re", "residue_im", "residual", "stable"], rows)
    _write_json(_out_path(cfg, "resonances.json"), {
        "schema_version": SCHEMA_VERSION,
        "rng_seed": cfg.rng_seed,
        "region": {"re_min": re0, "re_max": re1, "im_min": im0, "im_max": im1},
        "zeta": _zeta_payload(cfg),
        "resonances": result["resonances"],
    })
    if result.get("det_grid"):
        _write_csv(_out_path(cfg, "det_grid.csv"),
                   ["re", "im", "det_re", "det_im"],
                   [[s["re"], s["im"], s["det_re"], s["det_im"]]
                    for s in result["det_grid"]])
    print(f"{len(result['resonances'])} resonances "
          f"({sum(1 for r in result['resonances'] if r['stable'])} stable)")
    return 0 if result["any_stable"] else 3


def cmd_zeta_eval(cfg: RunConfig, client: ServiceClient, args) -> int:
    discs = _load_discs(cfg)
    payload = {
        "discs": discs,
        "lam": [args.lam[0], args.lam[1]],
        "weight": _weight_payload(cfg),
        "zeta": _zeta_payload(cfg),
        "tolerances": _tolerances_payload(cfg),
    }
    result = client.post("/zeta/eval", payload)
    _write_json(_out_path(cfg, "zeta.json"),
                {"schema_version": SCHEMA_VERSION, "rng_seed": cfg.rng_seed, **result})
    z = result["zeta"]
    d = result["determinant"]
    print(f"Z_f({args.lam[0]}{args.lam[1]:+}i) = {z[0]!r} {z[1]:+}i")
    print(f"d({args.lam[0]}{args.lam[1]:+}i) = {d[0]!r} {d[1]:+}i")
    return 0


def cmd_resolvent(cfg: RunConfig, client: ServiceClient, args) -> int:
    discs = _load_discs(cfg)
    payload = {
        "discs": discs,
        "lam": [args.lam[0], args.lam[1]],
        "weight": _weight_payload(cfg),
        "r_dom": cfg.r_dom,
        "dt": args.dt,
        "n_samples": args.n_samples,
        "identity_states": args.identity_states,
        "rng_seed": cfg.rng_seed,
    }
    if args.g_re is not None:
        payload["weight_g"] = {"re": args.g_re, "im": args.g_im,
                               "reflection_factor": [1.0, 0.0]}
    result = client.post("/resolvent/sample", payload)
    _write_json(_out_path(cfg, "resolvent.json"),
                {"schema_version": SCHEMA_VERSION, "rng_seed": cfg.rng_seed, **result})
    est = result["matrix_coefficient"]
    print(f"<R(lambda)f, g> = {est[0]!r} {est[1]:+}i  (stderr {result['stderr']:.3g}, "
          f"n = {result['n_samples']})")
    if result.get("identity_defects_max") is not None:
        print(f"identity defect max {result['identity_defects_max']:.3e} "
              f"(threshold {result['identity_threshold']:.1e})")
        if not result["identity_ok"]:
            return 3
    return 0


def cmd_trapped_set(cfg: RunConfig, client: ServiceClient, args) -> int:
    discs = _load_discs(cfg)
    payload = {
        "discs": discs,
        "n_s": args.n_s,
        "n_p": args.n_p,
        "n_bounce": args.n_bounce,
        "r_dom": cfg.r_dom,
        "tolerances": _tolerances_payload(cfg),
    }
    result = client.post("/trapped-set/grid", payload)
    _write_json(_out_path(cfg, "trapped.json"),
                {"schema_version": SCHEMA_VERSION, "rng_seed": cfg.rng_seed, **result})
    print(f"trapped cells: {result['trapped_cell_count']} "
          f"of {result['n_s'] * result['n_p'] * len(discs)}")
    return 0


def cmd_serve(cfg: RunConfig, client: ServiceClient, args) -> int:
    import uvicorn

    uvicorn.run("ndisk.service.app:app", host=args.host, port=args.port)
    return 0


# --- argument plumbing ---------------------------------------------------------------

def _build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="run configuration JSON file")
    common.add_argument("--server", help="service URL (default: run in-process)")
    common.add_argument("--obstacles", help="obstacle configuration file override")
    common.add_argument("--out", help="output directory override")
    common.add_argument("--seed", type=int, help="rng seed override")
    common.add_argument("--grazing-tol", type=float, help="grazing tolerance override")
    common.add_argument("--newton-tol", type=float, help="Newton tolerance override")
    common.add_argument("--r-dom", type=float, help="escape-domain radius override")
    common.add_argument("--max-len", type=int, help="topological truncation override")
    common.add_argument("--max-rep", type=int, help="repetition cutoff override")
    common.add_argument("--tail-tol", type=float, help="repetition tail tolerance override")
    common.add_argument("--region", type=float, nargs=4,
                        metavar=("RE_MIN", "RE_MAX", "IM_MIN", "IM_MAX"),
                        help="resonance scan rectangle override")
    common.add_argument("--weight-re", help="weight expression override (real part)")
    common.add_argument("--weight-im", help="weight expression override (imaginary part)")
    common.add_argument("--reflection-factor", type=float, nargs=2, metavar=("RE", "IM"),
                        help="per-reflection factor override")

    parser = argparse.ArgumentParser(prog="ndisk",
                                     description="Open disc-billiard dynamics and resonances")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("geometry-check", parents=[common]).set_defaults(run=cmd_geometry_check)

    p = sub.add_parser("simulate", parents=[common])
    p.add_argument("--state", type=float, nargs=4, metavar=("X", "Y", "VX", "VY"),
                   required=True)
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--time", type=float)
    group.add_argument("--bounces", type=int)
    group.add_argument("--escape-radius", type=float)
    p.set_defaults(run=cmd_simulate)

    sub.add_parser("orbits", parents=[common]).set_defaults(run=cmd_orbits)

    p = sub.add_parser("resonances", parents=[common])
    p.add_argument("--dump-det-grid", type=int, nargs=2, metavar=("N_RE", "N_IM"))
    p.set_defaults(run=cmd_resonances)

    p = sub.add_parser("zeta-eval", parents=[common])
    p.add_argument("--lam", type=float, nargs=2, metavar=("RE", "IM"), required=True)
    p.set_defaults(run=cmd_zeta_eval)

    p = sub.add_parser("resolvent", parents=[common])
    p.add_argument("--lam", type=float, nargs=2, metavar=("RE", "IM"), default=[2.0, 0.0])
    p.add_argument("--n-samples", type=int, default=500)
    p.add_argument("--dt", type=float, default=0.25)
    p.add_argument("--identity-states", type=int, default=100)
    p.add_argument("--g-re", help="second test function (defaults to the weight)")
    p.add_argument("--g-im")
    p.set_defaults(run=cmd_resolvent)

    p = sub.add_parser("trapped-set", parents=[common])
    p.add_argument("--n-s", type=int, default=40)
    p.add_argument("--n-p", type=int, default=25)
    p.add_argument("--n-bounce", type=int, default=12)
    p.set_defaults(run=cmd_trapped_set)

    p = sub.add_parser("serve", parents=[common])
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8711)
    p.set_defaults(run=cmd_serve)
    return parser


def _apply_overrides(cfg: RunConfig, args) -> RunConfig:
    if args.obstacles:
        cfg.obstacles = args.obstacles
    if args.out:
        cfg.out_dir = args.out
    if args.seed is not None:
        cfg.rng_seed = args.seed
    if args.grazing_tol is not None:
        cfg.grazing_tol = args.grazing_tol
    if args.newton_tol is not None:
        cfg.newton_tol = args.newton_tol
    if args.r_dom is not None:
        cfg.r_dom = args.r_dom
    if args.max_len is not None:
        cfg.max_len = args.max_len
    if args.max_rep is not None:
        cfg.max_rep = args.max_rep
    if args.tail_tol is not None:
        cfg.tail_tol = args.tail_tol
    if args.region is not None:
        cfg.region = tuple(args.region)
    if args.weight_re is not None:
        cfg.weight_re = args.weight_re
    if args.weight_im is not None:
        cfg.weight_im = args.weight_im
    if args.reflection_factor is not None:
        cfg.reflection_factor = tuple(args.reflection_factor)
    cfg.validate()
    return cfg


def main(argv: Optional[list[str]] = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = RunConfig.from_file(args.config) if args.config else RunConfig()
        cfg = _apply_overrides(cfg, args)
        client = ServiceClient(args.server)
        return args.run(cfg, client, args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (OSError, ValueError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
