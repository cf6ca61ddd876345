"""Command line client.

Each command posts its config to the service (in process unless ``--url``
is given), then writes the report as JSON or CSV.  Exit codes: 0 pass,
1 usage or config error, 2 scientific divergence or failed check,
3 internal error.
"""

from __future__ import annotations

import json
import math
import warnings
from pathlib import Path

import click
import httpx

from . import emit

EXIT_OK, EXIT_USAGE, EXIT_DIVERGENCE, EXIT_INTERNAL = 0, 1, 2, 3

# used by `validate` when no config is given; the criteria carry their own parameters
DEFAULT_VALIDATE_CONFIG = {"physics": {"beta": 4 * math.pi, "s": 0.0}}


class CommandError(Exception):
    def __init__(self, body: dict):
        super().__init__(body.get("message", ""))
        self.body = body


def _client(url: str | None):
    if url:
        return httpx.Client(base_url=url, timeout=None)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        from fastapi.testclient import TestClient

    from .service import create_app

    return TestClient(create_app(), raise_server_exceptions=False)


def call(command: str, config: dict, seed: int | None = None, out: str | None = None,
         url: str | None = None) -> dict:
    """Run one command through the service and return its report."""
    payload = {"config": config, "seed": seed, "out": out}
    with _client(url) as client:
        resp = client.post(f"/{command}", json=payload)
    try:
        body = resp.json()
    except ValueError:
        body = {"kind": "internal-error", "message": resp.text, "exit_code": EXIT_INTERNAL}
    if resp.status_code != 200:
        if "exit_code" not in body:
            # request-schema rejection from the framework
            body = {"kind": "invalid-request", "message": json.dumps(body.get("detail", body)),
                    "exit_code": EXIT_USAGE}
        raise CommandError(body)
    return body


def _read_config(path: str | None, default: dict | None = None) -> dict:
    if path is None:
        if default is None:
            raise click.UsageError("--config is required")
        return json.loads(json.dumps(default))
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise CommandError({"kind": "invalid-parameter", "message": f"cannot read config: {exc}",
                            "exit_code": EXIT_USAGE}) from exc
    if not isinstance(data, dict):
        raise CommandError({"kind": "invalid-parameter", "message": "config must be a JSON object",
                            "exit_code": EXIT_USAGE})
    return data


def _run(command: str, config_path, emit_fmt, seed, out, url, default=None, patch=None) -> int:
    try:
        config = _read_config(config_path, default)
        if patch:
            patch(config)
        out_abs = str(Path(out).resolve()) if out else None
        report = call(command, config, seed=seed, out=out_abs, url=url)
    except CommandError as exc:
        click.echo(json.dumps(exc.body, sort_keys=True), err=True)
        return int(exc.body.get("exit_code", EXIT_INTERNAL))
    except httpx.HTTPError as exc:
        click.echo(json.dumps({"kind": "connection-error", "message": str(exc),
                               "exit_code": EXIT_INTERNAL}), err=True)
        return EXIT_INTERNAL
    if out:
        click.echo(str(emit.write(report, emit_fmt, out)))
    else:
        click.echo(emit.render(report, emit_fmt), nl=False)
    for w in report.get("warnings", []):
        click.echo(f"warning: {w}", err=True)
    return int(report["exit_code"])


def _common(fn, config_required=True):
    fn = click.option("--url", default=None, help="Service base URL; in process when omitted.")(fn)
    fn = click.option("--out", type=click.Path(file_okay=False), default=None,
                      help="Directory for emitted files; stdout when omitted.")(fn)
    fn = click.option("--seed", type=click.IntRange(0, 2**64 - 1), default=None,
                      help="Seed override (unsigned 64-bit).")(fn)
    fn = click.option("--emit", "emit_fmt", type=click.Choice(["csv", "json"]), default="json",
                      show_default=True)(fn)
    fn = click.option("--config", "config_path", type=click.Path(dir_okay=False),
                      required=config_required, help="JSON run configuration.")(fn)
    return fn


def _common_optional(fn):
    return _common(fn, config_required=False)


@click.group()
@click.version_option(package_name="artifact")
def cli():
    """Discrete Gaussian height model toolkit."""


@cli.command("validate")
@click.option("--criteria", default=None, help="Comma-separated criterion numbers (default all).")
@_common_optional
def validate_cmd(config_path, emit_fmt, seed, out, url, criteria):
    """Run the acceptance criteria and report pass/fail for each."""
    patch = None
    if criteria:
        try:
            nums = [int(c) for c in criteria.split(",") if c.strip()]
        except ValueError as exc:
            raise click.BadParameter("criteria must be integers", param_hint="--criteria") from exc

        def patch(cfg):
            cfg.setdefault("validate", {})["criteria"] = nums
    return _run("validate", config_path, emit_fmt, seed, out, url,
                default=DEFAULT_VALIDATE_CONFIG, patch=patch)


@cli.command("frd-report")
@_common
def frd_report_cmd(config_path, emit_fmt, seed, out, url):
    """Decomposition identity, finite range and asymptotics of the covariance slices."""
    return _run("frd-report", config_path, emit_fmt, seed, out, url)


@cli.command("flow")
@_common
def flow_cmd(config_path, emit_fmt, seed, out, url):
    """Iterate the coupling flow; exit 2 when it diverges or never contracts."""
    return _run("flow", config_path, emit_fmt, seed, out, url)


@cli.command("mc")
@_common
def mc_cmd(config_path, emit_fmt, seed, out, url):
    """Heat-bath Monte Carlo of the height model."""
    return _run("mc", config_path, emit_fmt, seed, out, url)


@cli.command("inequalities")
@_common
def inequalities_cmd(config_path, emit_fmt, seed, out, url):
    """Fuzz the lattice inequalities and the closure size bounds."""
    return _run("inequalities", config_path, emit_fmt, seed, out, url)


@cli.command("serve")
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8000, show_default=True, type=int)
def serve_cmd(host, port):
    """Serve the HTTP API (needs the optional uvicorn dependency)."""
    try:
        import uvicorn
    except ImportError:
        click.echo("uvicorn is not installed; pip install 'artifact[serve]'", err=True)
        return EXIT_USAGE
    from .service import create_app

    uvicorn.run(create_app(), host=host, port=port)
    return EXIT_OK


def main(argv=None) -> int:
    try:
        rv = cli.main(args=argv, prog_name="dglab", standalone_mode=False)
    except click.exceptions.Exit as exc:
        rv = exc.exit_code
    except (click.UsageError, click.BadParameter) as exc:
        exc.show()
        rv = EXIT_USAGE
    except click.ClickException as exc:
        exc.show()
        rv = EXIT_USAGE
    except click.exceptions.Abort:
        rv = EXIT_USAGE
    except Exception as exc:  # noqa: BLE001 - last line of defence for the exit code contract
        click.echo(json.dumps({"kind": "internal-error", "message": repr(exc),
                               "exit_code": EXIT_INTERNAL}), err=True)
        rv = EXIT_INTERNAL
    return int(rv or 0)
