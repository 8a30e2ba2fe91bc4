"""Operator command line.

Commands run against a local store (``--store`` / ``TMEM_STORE``) or, with
``--url`` / ``TMEM_URL``, act as a thin client of a running service. Both
paths print the same JSON with ``--json``.

Exit codes: 0 success, 1 validation, 2 I/O, 3 gateway.
"""

from __future__ import annotations

import json
import logging
import sys
from collections.abc import Iterator
from pathlib import Path
from typing import Any, Optional

import click
import httpx

from tmem import errors
from tmem.config import Settings
from tmem.engine import ConsolidateRequest, Engine, ExtractMode, RetrieveRequest
from tmem.retrieval import Strategy

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_IO = 2
EXIT_GATEWAY = 3

_STRATEGIES = {"cosine": Strategy.COSINE, "llm": Strategy.LLM_GUIDED, "llm_guided": Strategy.LLM_GUIDED}


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, errors.GatewayError):
        return EXIT_GATEWAY
    if isinstance(exc, (errors.StoreIoError, OSError, httpx.TransportError)):
        return EXIT_IO
    return EXIT_VALIDATION


class RemoteError(errors.TmemError):
    """Service returned an error; ``code`` is the matching exit code."""

    def __init__(self, message: str, code: int) -> None:
        super().__init__(message)
        self.code = code


# -- backends --------------------------------------------------------------------------------


class LocalBackend:
    def __init__(self, engine: Engine) -> None:
        self.engine = engine

    def ingest(self, raw: Any, extract: ExtractMode | None) -> dict[str, Any]:
        ingested = self.engine.ingest(raw)
        summary = self.engine.extract(ingested.id, extract) if extract is not None else None
        return {
            "ingest": ingested.model_dump(mode="json"),
            "extraction": summary.model_dump(mode="json") if summary is not None else None,
        }

    def consolidate(self, threshold: float | None) -> dict[str, Any]:
        return self.engine.consolidate(threshold).model_dump(mode="json")

    def retrieve(self, request: RetrieveRequest) -> dict[str, Any]:
        return self.engine.retrieve(request).model_dump(mode="json")

    def stats(self) -> dict[str, Any]:
        return self.engine.stats().model_dump(mode="json")

    def tip(self, tip_id: str) -> dict[str, Any]:
        return self.engine.tip(tip_id).model_dump(mode="json")

    def export(self) -> Iterator[str]:
        return self.engine.export_jsonl()

    def close(self) -> None:
        self.engine.close()


class RemoteBackend:
    def __init__(self, url: str, timeout: float = 60.0) -> None:
        self.client = httpx.Client(base_url=url.rstrip("/"), timeout=timeout)

    def _call(self, method: str, path: str, **kwargs: Any) -> httpx.Response:
        response = self.client.request(method, path, **kwargs)
        if response.status_code >= 400:
            raise _remote_error(response)
        return response

    def ingest(self, raw: Any, extract: ExtractMode | None) -> dict[str, Any]:
        params = {"extract": extract.value} if extract is not None else {}
        ingested = self._call("POST", "/v1/trajectories", json=raw, params=params).json()
        summary = None
        if ingested.get("job_id"):
            summary = self._wait(ingested["job_id"])
        return {"ingest": ingested, "extraction": summary}

    def _wait(self, job_id: str, poll: float = 0.05) -> dict[str, Any]:
        import time

        while True:
            job = self._call("GET", f"/v1/jobs/{job_id}").json()
            if job["state"] == "done":
                return job["result"]
            if job["state"] == "failed":
                raise RemoteError(f"extraction job {job_id} failed: {job['error']}", EXIT_GATEWAY)
            time.sleep(poll)

    def consolidate(self, threshold: float | None) -> dict[str, Any]:
        body = ConsolidateRequest(threshold=threshold).model_dump(mode="json")
        return self._call("POST", "/v1/consolidate", json=body).json()

    def retrieve(self, request: RetrieveRequest) -> dict[str, Any]:
        body = request.model_dump(mode="json", exclude_none=True)
        return self._call("POST", "/v1/retrieve", json=body).json()

    def stats(self) -> dict[str, Any]:
        return self._call("GET", "/v1/stats").json()

    def tip(self, tip_id: str) -> dict[str, Any]:
        return self._call("GET", f"/v1/tips/{tip_id}").json()

    def export(self) -> Iterator[str]:
        return iter(self._call("GET", "/v1/export").text.splitlines())

    def close(self) -> None:
        self.client.close()


def _remote_error(response: httpx.Response) -> RemoteError:
    try:
        body = response.json()
    except ValueError:
        body = {"detail": response.text}
    name = body.get("error") if isinstance(body, dict) else None
    kind = getattr(errors, name, None) if isinstance(name, str) else None
    if isinstance(kind, type) and issubclass(kind, errors.TmemError):
        code = exit_code_for(kind("x"))
    elif response.status_code in (400, 404, 409, 422):
        code = EXIT_VALIDATION
    elif response.status_code == 502:
        code = EXIT_GATEWAY
    else:
        code = EXIT_IO
    detail = body.get("detail") if isinstance(body, dict) else body
    return RemoteError(f"service error {response.status_code} {name or ''}: {detail}".strip(), code)


# -- output ----------------------------------------------------------------------------------


def _dump(data: Any) -> str:
    return json.dumps(data, indent=2, sort_keys=True, ensure_ascii=False)


def _table(rows: list[tuple[str, Any]], err: bool = False) -> None:
    width = max((len(k) for k, _ in rows), default=0)
    for key, value in rows:
        click.echo(f"{key.ljust(width)}  {value}", err=err)


def _report_rows(report: dict[str, Any]) -> list[tuple[str, Any]]:
    keys = (
        "threshold",
        "tips_before",
        "tips_after",
        "generalized",
        "clusters_formed",
        "conflicts_resolved",
        "iterations",
        "revision_before",
        "revision_after",
    )
    rows = [(k, report[k]) for k in keys]
    rows.append(("failures", len(report["failures"])))
    return rows


def _stats_rows(stats: dict[str, Any]) -> list[tuple[str, Any]]:
    rows: list[tuple[str, Any]] = [(k, stats[k]) for k in ("revision", "trajectories", "tips", "clusters")]
    for group in ("by_category", "by_priority", "by_granularity"):
        rows.extend((f"{group}.{k}", v) for k, v in stats[group].items())
    return rows


# -- commands --------------------------------------------------------------------------------


class Context:
    def __init__(self, store: Optional[str], url: Optional[str], as_json: bool) -> None:
        self.store = store
        self.url = url
        self.as_json = as_json

    def backend(self, readonly: bool = False) -> LocalBackend | RemoteBackend:
        if self.url:
            return RemoteBackend(self.url)
        if not self.store:
            raise errors.ConfigError("no store configured: pass --store or set TMEM_STORE")
        settings = Settings.load(store=self.store)
        return LocalBackend(Engine.from_settings(settings, readonly=readonly))


def _run(ctx: Context, readonly: bool, action: Any) -> None:
    """Open a backend, run ``action`` on it and translate failures into exit codes."""
    backend = None
    try:
        backend = ctx.backend(readonly=readonly)
        action(backend)
    except RemoteError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(exc.code)
    except (errors.TmemError, OSError, httpx.TransportError) as exc:
        click.echo(f"error: {type(exc).__name__}: {exc}", err=True)
        sys.exit(exit_code_for(exc))
    finally:
        if backend is not None:
            backend.close()


@click.group()
@click.option("--store", envvar="TMEM_STORE", type=click.Path(file_okay=False), help="Store directory.")
@click.option("--url", envvar="TMEM_URL", help="Use a running service instead of a local store.")
@click.option("--json", "as_json", is_flag=True, help="Print JSON instead of tables.")
@click.pass_context
def main(click_ctx: click.Context, store: Optional[str], url: Optional[str], as_json: bool) -> None:
    """Trajectory-informed memory: ingest, consolidate and retrieve tips."""
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    click_ctx.obj = Context(store, url, as_json)


@main.command()
@click.argument("files", nargs=-1, required=True)
@click.option("--extract", type=click.Choice([m.value for m in ExtractMode]), default=None)
@click.pass_obj
def ingest(ctx: Context, files: tuple[str, ...], extract: Optional[str]) -> None:
    """Ingest trajectory files, optionally extracting tips."""
    mode = ExtractMode(extract) if extract else None

    def action(backend: LocalBackend | RemoteBackend) -> None:
        results = []
        for name in files:
            try:
                raw = json.loads(Path(name).read_text(encoding="utf-8"))
            except json.JSONDecodeError as exc:
                raise errors.ValidationError(f"{name} is not valid JSON: {exc}") from exc
            result = backend.ingest(raw, mode)
            results.append(result)
            if not ctx.as_json:
                line = f"{result['ingest']['id']}  revision {result['ingest']['revision']}"
                summary = result["extraction"]
                if summary is not None:
                    line += f"  outcome {summary['outcome']['kind']}  tips {summary['tip_count']}  revision {summary['revision']}"
                click.echo(line)
        if ctx.as_json:
            click.echo(_dump(results))

    _run(ctx, False, action)


@main.command()
@click.option("--threshold", type=float, default=None, help="Similarity threshold (default 0.85).")
@click.pass_obj
def consolidate(ctx: Context, threshold: Optional[float]) -> None:
    """Generalize, cluster and merge stored tips."""

    def action(backend: LocalBackend | RemoteBackend) -> None:
        report = backend.consolidate(threshold)
        if ctx.as_json:
            click.echo(_dump(report))
        else:
            _table(_report_rows(report))

    _run(ctx, False, action)


@main.command()
@click.option("--task", required=True, help="Task description to retrieve guidance for.")
@click.option("--strategy", type=click.Choice(sorted(_STRATEGIES)), default="cosine")
@click.option("--tau", type=float, default=None)
@click.option("--k", type=int, default=None)
@click.option("--render", is_flag=True, help="Print only the guidelines text to stdout.")
@click.pass_obj
def retrieve(
    ctx: Context, task: str, strategy: str, tau: Optional[float], k: Optional[int], render: bool
) -> None:
    """Retrieve tips relevant to a task."""
    fields: dict[str, Any] = {"task_description": task, "strategy": _STRATEGIES[strategy]}
    if tau is not None:
        fields["tau"] = tau
    if k is not None:
        fields["k"] = k

    def action(backend: LocalBackend | RemoteBackend) -> None:
        try:
            request = RetrieveRequest(**fields)
        except ValueError as exc:
            raise errors.ValidationError(str(exc)) from exc
        result = backend.retrieve(request)
        if render:
            click.echo(result["rendered"], nl=False)
            if not ctx.as_json:
                _retrieval_table(result, err=True)
        elif ctx.as_json:
            click.echo(_dump(result))
        else:
            _retrieval_table(result, err=False)

    _run(ctx, True, action)


def _retrieval_table(result: dict[str, Any], err: bool) -> None:
    click.echo(f"strategy {result['strategy_used']}  tips {len(result['tips'])}", err=err)
    for item in result["tips"]:
        tip = item["tip"]
        click.echo(f"{item['score']:.4f}  {tip['id']}  {tip['category']}/{tip['priority']}", err=err)
    for warning in result["warnings"]:
        click.echo(f"warning: {warning}", err=err)


@main.command()
@click.pass_obj
def stats(ctx: Context) -> None:
    """Store counts by category, priority and granularity."""

    def action(backend: LocalBackend | RemoteBackend) -> None:
        data = backend.stats()
        if ctx.as_json:
            click.echo(_dump(data))
        else:
            _table(_stats_rows(data))

    _run(ctx, True, action)


@main.command()
@click.argument("tip_id")
@click.pass_obj
def show(ctx: Context, tip_id: str) -> None:
    """Show one tip."""

    def action(backend: LocalBackend | RemoteBackend) -> None:
        data = backend.tip(tip_id)
        if ctx.as_json:
            click.echo(_dump(data))
        else:
            rows = [(k, v) for k, v in data.items() if k != "embedding" and k != "index_embedding"]
            _table([(k, json.dumps(v, ensure_ascii=False) if isinstance(v, (list, dict)) else v) for k, v in rows])

    _run(ctx, True, action)


@main.command()
@click.option("--format", "fmt", type=click.Choice(["jsonl"]), default="jsonl")
@click.pass_obj
def export(ctx: Context, fmt: str) -> None:
    """Dump trajectories, tips and clusters as JSON lines."""

    def action(backend: LocalBackend | RemoteBackend) -> None:
        for line in backend.export():
            click.echo(line)

    _run(ctx, True, action)


@main.command()
@click.option("--host", default=None)
@click.option("--port", type=int, default=None)
@click.pass_obj
def serve(ctx: Context, host: Optional[str], port: Optional[int]) -> None:
    """Run the HTTP service on the configured store."""
    import uvicorn

    from tmem.service import create_app

    try:
        settings = Settings.load(store=ctx.store, host=host, port=port)
        if settings.store is None:
            raise errors.ConfigError("no store configured: pass --store or set TMEM_STORE")
        logging.getLogger("tmem").setLevel(logging.INFO)
        app = create_app(settings=settings)
    except (errors.TmemError, OSError) as exc:
        click.echo(f"error: {type(exc).__name__}: {exc}", err=True)
        sys.exit(exit_code_for(exc))
    uvicorn.run(app, host=settings.host, port=settings.port, log_level="info")


if __name__ == "__main__":
    main()
