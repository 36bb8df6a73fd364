"""Command-line client for the retrieval and forecasting service.

Every subcommand is a thin HTTP call: by default the CLI spins up the
service in-process (no socket) and talks to it over an ASGI transport;
``--server URL`` points the same calls at a running remote instance.

Exit codes: 0 success, 1 configuration/usage error, 2 data error,
3 backend or transport error.
"""

from __future__ import annotations

import argparse
import asyncio
import json
import sys
from pathlib import Path

import httpx

from .config import parse_value
from .errors import BackendError, ConfigError, DataError, EngineError

EXIT_BY_KIND = {"config": 1, "data": 2, "backend": 3}

CONFIG_FLAGS = (
    "window", "stride", "cap", "k", "rho", "probes", "d", "h",
    "lam", "seed", "estimator", "bandwidth", "horizon",
)


class _Parser(argparse.ArgumentParser):
    """argparse that exits 1 (config/usage) instead of its default 2."""

    def error(self, message: str):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


class ServiceClient:
    """POST/GET JSON either in-process (ASGI) or to a remote server."""

    def __init__(self, server: str | None):
        self.server = server

    def request(self, method: str, path: str, *, body: dict | None = None,
                params: dict | None = None) -> tuple[int, dict]:
        if self.server is not None:
            try:
                with httpx.Client(base_url=self.server, timeout=None) as client:
                    resp = client.request(method, path, json=body, params=params)
            except httpx.HTTPError as exc:
                raise BackendError(f"cannot reach server {self.server}: {exc}") from exc
            return resp.status_code, resp.json()

        async def go() -> tuple[int, dict]:
            from .service import create_app

            transport = httpx.ASGITransport(app=create_app())
            async with httpx.AsyncClient(
                transport=transport, base_url="http://tsrag", timeout=None
            ) as client:
                resp = await client.request(method, path, json=body, params=params)
                return resp.status_code, resp.json()

        return asyncio.run(go())

    def call(self, method: str, path: str, *, body: dict | None = None,
             params: dict | None = None) -> dict:
        status, payload = self.request(method, path, body=body, params=params)
        if status == 200:
            return payload
        detail = payload.get("detail") if isinstance(payload, dict) else None
        if isinstance(detail, dict) and "kind" in detail:
            kind = detail["kind"]
            message = detail.get("message", "")
        else:
            kind = "config"
            message = json.dumps(detail if detail is not None else payload)
        exc_type = {"config": ConfigError, "data": DataError, "backend": BackendError}
        raise exc_type.get(kind, ConfigError)(message)


# ----------------------------------------------------------------------
# argument plumbing


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--server", metavar="URL",
                   help="talk to a running service instead of in-process")
    p.add_argument("--json", action="store_true", dest="as_json",
                   help="print the raw JSON response")


def _add_config_flags(p: argparse.ArgumentParser, exclude: tuple[str, ...] = ()) -> None:
    g = p.add_argument_group("run configuration (file < flags)")
    g.add_argument("--config", metavar="FILE", help="key=value config file")
    specs = {
        "window": int, "stride": int, "cap": int, "k": int, "rho": float,
        "probes": int, "d": int, "h": int, "seed": int, "horizon": int,
    }
    for name in CONFIG_FLAGS:
        if name in exclude:
            continue
        if name == "lam":
            g.add_argument("--lambda", dest="lam", type=float, metavar="X")
        elif name == "estimator":
            g.add_argument("--estimator", choices=("biased", "unbiased"))
        elif name == "bandwidth":
            g.add_argument("--bandwidth", metavar="X",
                           help="positive number or 'median-heuristic'")
        else:
            g.add_argument(f"--{name}", type=specs[name], metavar="N")


def _collect_config(args: argparse.Namespace) -> dict:
    """Merge config file values with flag overrides (flags win)."""
    out: dict[str, object] = {}
    config_path = getattr(args, "config", None)
    if config_path:
        from .config import read_config_file

        out.update(read_config_file(config_path))
    for name in CONFIG_FLAGS:
        value = getattr(args, name, None)
        if value is None:
            continue
        if name == "bandwidth":
            value = parse_value("bandwidth", str(value))
        out[name] = value
    return out


def _parse_values(text: str) -> list[float]:
    try:
        return [float(tok) for tok in text.replace(",", " ").split()]
    except ValueError:
        raise ConfigError(f"cannot parse --values: {text!r}") from None


def _read_values_file(path: str) -> list[float]:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read values file {path}: {exc}") from exc
    return _parse_values(text)


# ----------------------------------------------------------------------
# subcommand handlers


def _cmd_ingest(args, client: ServiceClient) -> dict:
    return client.call("POST", "/ingest", body={
        "csv_paths": args.csv,
        "domain": args.domain,
        "freq": args.freq,
        "out_store": args.store,
    })


def _cmd_build(args, client: ServiceClient) -> dict:
    return client.call("POST", "/build", body={
        "store_paths": args.store,
        "out_tree": args.tree,
        "config": _collect_config(args),
    })


def _cmd_query(args, client: ServiceClient) -> dict:
    if args.values is not None:
        values = _parse_values(args.values)
    elif args.values_file is not None:
        values = _read_values_file(args.values_file)
    else:
        raise ConfigError("query needs --values or --values-file")
    return client.call("POST", "/query", body={
        "tree_path": args.tree,
        "values": values,
        "domain": args.domain,
        "already_normalized": args.normalized,
        "config": _collect_config(args),
    })


def _cmd_insert(args, client: ServiceClient) -> dict:
    return client.call("POST", "/insert", body={
        "tree_path": args.tree,
        "store_paths": args.store,
        "stride": args.stride,
        "save": not args.no_save,
    })


def _cmd_eval(args, client: ServiceClient) -> dict:
    probes_values = None
    if args.probes_sweep is not None:
        probes_values = [
            tok.strip() for tok in args.probes_sweep.split(",") if tok.strip()
        ]
    return client.call("POST", "/eval", body={
        "tree_path": args.tree,
        "n_queries": args.queries,
        "probes_values": probes_values,
        "noise": args.noise,
        "workers": args.workers,
        "report_path": args.report,
        "config": _collect_config(args),
    })


def _cmd_forecast(args, client: ServiceClient) -> dict:
    backend = None
    if args.backend is not None:
        prefix = "external:"
        if not args.backend.startswith(prefix) or not args.backend[len(prefix):]:
            raise ConfigError(
                f"--backend must look like 'external:<command>', got {args.backend!r}"
            )
        backend = args.backend[len(prefix):]
    return client.call("POST", "/forecast", body={
        "store_paths": args.store,
        "tree_path": args.tree,
        "ablate_rag": args.ablate_rag,
        "backend": backend,
        "epochs": args.epochs,
        "lr": args.lr,
        "batch_size": args.batch_size,
        "sample_stride": args.sample_stride,
        "limit": args.limit,
        "report_path": args.report,
        "params_out": args.save_params,
        "params_in": args.load_params,
        "config": _collect_config(args),
    })


def _cmd_stats(args, client: ServiceClient) -> dict:
    return client.call("GET", "/stats", params={"tree_path": args.tree})


def _cmd_synth(args, client: ServiceClient) -> dict:
    return client.call("POST", "/synth", body={
        "kind": args.kind,
        "seed": args.seed,
        "out_base": args.out_base,
        "out_targets": args.out_targets,
        "n_windows": args.n_windows,
        "width": args.width,
        "n_domains": args.domains,
        "clusters_per_domain": args.clusters_per_domain,
        "noise": args.noise,
        "length": args.length,
        "motifs_per_domain": args.motifs_per_domain,
        "base_per_motif": args.base_per_motif,
        "targets_per_motif": args.targets_per_motif,
    })


# ----------------------------------------------------------------------
# printing


def _print_summary(payload: dict) -> None:
    print(f"tree: {payload['tree_path']}")
    print(
        f"window_size={payload['window_size']} cap={payload['cap']} "
        f"seed={payload['seed']} total_windows={payload['total_windows']}"
    )
    for dom in payload["domains"]:
        sizes = ",".join(str(s) for s in dom["sizes"])
        print(f"domain {dom['domain']}: clusters={dom['clusters']} sizes=[{sizes}]")


def _print_response(command: str, payload: dict) -> None:
    if command == "query":
        for hit in payload["hits"]:
            print(f"{hit['window_id']}\t{hit['score']:.6f}\t{hit['domain']}")
        print(
            f"# evaluations={payload['evaluations']} "
            f"clusters_probed={payload['clusters_probed']}",
            file=sys.stderr,
        )
        return
    if command == "stats":
        _print_summary(payload)
        return
    if command == "build":
        _print_summary(payload)
        print(f"windows_indexed={payload['windows_indexed']}")
        return
    if command == "insert":
        print(
            f"inserted={payload['inserted']} splits={payload['splits']} "
            f"new_domains={','.join(payload['new_domains']) or '-'}"
        )
        _print_summary(payload["summary"])
        return
    if command == "eval":
        from .bench import CSV_HEADER

        print(CSV_HEADER)
        for r in payload["rows"]:
            print(
                f"{r['probes']},{r['k']},{r['queries']},{r['recall']!r},"
                f"{r['mean_evaluations']!r},{r['oracle_evaluations']},"
                f"{r['mean_seconds']!r}"
            )
        if payload.get("report_path"):
            print(f"# report written to {payload['report_path']}", file=sys.stderr)
        return
    if command == "forecast":
        print("split,samples,mse,mse_normalized")
        for r in payload["rows"]:
            print(f"{r['split']},{r['samples']},{r['mse']!r},{r['mse_normalized']!r}")
        for key in ("report_path", "params_path"):
            if payload.get(key):
                print(f"# {key}={payload[key]}", file=sys.stderr)
        return
    print(json.dumps(payload, indent=2, sort_keys=True))


# ----------------------------------------------------------------------
# parser assembly


def build_parser() -> _Parser:
    parser = _Parser(prog="tsrag", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="convert CSV files into a series store")
    p.add_argument("csv", nargs="+", help="CSV files to ingest")
    p.add_argument("--domain", required=True)
    p.add_argument("--freq", default="-")
    p.add_argument("--store", required=True, metavar="OUT")
    _add_common(p)

    p = sub.add_parser("build", help="build a prototype tree from stores")
    p.add_argument("--store", nargs="+", required=True)
    p.add_argument("--tree", required=True, metavar="OUT")
    _add_config_flags(p)
    _add_common(p)

    p = sub.add_parser("query", help="top-k similarity search")
    p.add_argument("--tree", required=True)
    p.add_argument("--values", help="comma- or space-separated target values")
    p.add_argument("--values-file", help="file of target values")
    p.add_argument("--domain")
    p.add_argument("--normalized", action="store_true",
                   help="values are already z-normalized")
    _add_config_flags(p)
    _add_common(p)

    p = sub.add_parser("insert", help="insert store windows into a tree")
    p.add_argument("--tree", required=True)
    p.add_argument("--store", nargs="+", required=True)
    p.add_argument("--stride", type=int, help="segmentation stride (default: window)")
    p.add_argument("--no-save", action="store_true", help="do not persist the tree")
    _add_common(p)

    p = sub.add_parser("eval", help="retrieval recall/cost sweep vs the oracle")
    p.add_argument("--tree", required=True)
    p.add_argument("--queries", type=int, default=100)
    p.add_argument("--probes", dest="probes_sweep", metavar="LIST",
                   help="sweep list, e.g. '1,2,4,8,all'")
    p.add_argument("--noise", type=float, default=0.05)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--report", metavar="CSV")
    _add_config_flags(p, exclude=("probes",))
    _add_common(p)

    p = sub.add_parser("forecast", help="train/evaluate the forecaster")
    p.add_argument("--store", nargs="+", required=True, help="target series store(s)")
    p.add_argument("--tree", help="prototype tree (omit only with --ablate-rag)")
    p.add_argument("--ablate-rag", action="store_true",
                   help="drop the retrieval branch")
    p.add_argument("--backend", metavar="external:CMD",
                   help="forecast via an external command instead of training")
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--sample-stride", type=int)
    p.add_argument("--limit", type=int, help="max test samples for the backend path")
    p.add_argument("--report", metavar="CSV")
    p.add_argument("--save-params", metavar="FILE")
    p.add_argument("--load-params", metavar="FILE")
    _add_config_flags(p)
    _add_common(p)

    p = sub.add_parser("stats", help="print a tree summary")
    p.add_argument("--tree", required=True)
    _add_common(p)

    p = sub.add_parser("synth", help="generate a synthetic benchmark store")
    p.add_argument("--kind", choices=("windows", "forecast"), required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-base", required=True, metavar="STORE")
    p.add_argument("--out-targets", metavar="STORE")
    p.add_argument("--n-windows", type=int, default=10000)
    p.add_argument("--width", type=int, default=64)
    p.add_argument("--domains", type=int, default=4)
    p.add_argument("--clusters-per-domain", type=int, default=10)
    p.add_argument("--noise", type=float, default=0.15)
    p.add_argument("--length", type=int, default=512)
    p.add_argument("--motifs-per-domain", type=int, default=4)
    p.add_argument("--base-per-motif", type=int, default=6)
    p.add_argument("--targets-per-motif", type=int, default=2)
    _add_common(p)

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)

    return parser


_HANDLERS = {
    "ingest": _cmd_ingest,
    "build": _cmd_build,
    "query": _cmd_query,
    "insert": _cmd_insert,
    "eval": _cmd_eval,
    "forecast": _cmd_forecast,
    "stats": _cmd_stats,
    "synth": _cmd_synth,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "serve":
        import uvicorn

        from .service import create_app

        uvicorn.run(create_app(), host=args.host, port=args.port)
        return 0
    client = ServiceClient(getattr(args, "server", None))
    try:
        payload = _HANDLERS[args.command](args, client)
    except EngineError as exc:
        print(f"tsrag {args.command}: error: {exc}", file=sys.stderr)
        return exc.exit_code
    if getattr(args, "as_json", False):
        print(json.dumps(payload, indent=2, sort_keys=True))
    else:
        _print_response(args.command, payload)
    return 0


if __name__ == "__main__":
    sys.exit(main())
