"""Command-line client for the experiment harness.

Every subcommand builds the same request model the HTTP service accepts
and either invokes the handler in-process (default) or POSTs it to a
running server given via ``--server``. Exit code is 0 on success and
nonzero on any error or a failed gradient check.

``train`` and ``ablation`` accept a flat ``key = value`` config file; any
key can be overridden with the matching command-line flag.
"""

from __future__ import annotations

import click

from .experiment import parse_config_text
from .service import handlers, schemas

_ENDPOINTS = {
    "generate": ("/generate", handlers.handle_generate, schemas.GenerateResponse),
    "train": ("/train", handlers.handle_train, schemas.TrainResponse),
    "evaluate": ("/evaluate", handlers.handle_evaluate, schemas.EvaluateResponse),
    "ablation": ("/ablation", handlers.handle_ablation, schemas.AblationResponse),
    "gradcheck": ("/gradcheck", handlers.handle_gradcheck, schemas.GradcheckResponse),
}


def _dispatch(name, request, server):
    path, handler, resp_model = _ENDPOINTS[name]
    if server is None:
        try:
            return handler(request)
        except (ValueError, FileNotFoundError, TypeError) as exc:
            raise click.ClickException(str(exc))
    import httpx

    resp = httpx.post(server.rstrip("/") + path, json=request.model_dump(),
                      timeout=None)
    if resp.status_code != 200:
        try:
            detail = resp.json().get("detail", resp.text)
        except ValueError:
            detail = resp.text
        raise click.ClickException(f"server returned {resp.status_code}: {detail}")
    return resp_model.model_validate(resp.json())


def _explicit_params(ctx):
    """Parameters the user actually passed on the command line."""
    from click.core import ParameterSource

    return {
        key: value
        for key, value in ctx.params.items()
        if ctx.get_parameter_source(key) == ParameterSource.COMMANDLINE
    }


def _schedule(value):
    return [int(v) for v in value.split(",") if v.strip()]


server_option = click.option("--server", default=None, metavar="URL",
                             help="POST to a running service instead of running locally.")


@click.group()
def main():
    """Spinal height regression benchmark: data generation, training,
    evaluation, ablation, and gradient checking."""


@main.command()
@click.option("--out-dir", required=True)
@click.option("--n", default=200, show_default=True)
@click.option("--image-h", default=128, show_default=True)
@click.option("--image-w", default=64, show_default=True)
@click.option("--pixel-spacing", type=float, default=None,
              help="mm per pixel [default: keep the full-scale field of view]")
@click.option("--latent-dim", default=4, show_default=True)
@click.option("--noise-sigma", default=0.02, show_default=True)
@click.option("--ambiguity-prob", default=0.1, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--train-fraction", default=0.8, show_default=True)
@server_option
def generate(server, **kwargs):
    """Generate a synthetic phantom dataset."""
    req = schemas.GenerateRequest(**kwargs)
    resp = _dispatch("generate", req, server)
    click.echo(f"wrote {resp.n} samples ({resp.n_train} train / {resp.n_test} test) "
               f"at {resp.image_hw[0]}x{resp.image_hw[1]} px, "
               f"{resp.pixel_spacing:.4f} mm/px")
    click.echo(resp.manifest_path)


_TRAIN_KEYS = list(schemas.TrainRequest.model_fields)


def _train_options(fn):
    fn = click.option("--dataset", default=None)(fn)
    fn = click.option("--out-dir", "out_dir", default=None)(fn)
    fn = click.option("--variant", type=click.Choice(["carn", "cnn-baseline"]),
                      default=None)(fn)
    fn = click.option("--loss", type=click.Choice(["loss_p", "loss_t"]), default=None)(fn)
    fn = click.option("--seed", type=int, default=None)(fn)
    fn = click.option("--epochs", type=int, default=None)(fn)
    fn = click.option("--batch-size", type=int, default=None)(fn)
    fn = click.option("--learning-rate", type=float, default=None)(fn)
    fn = click.option("--beta1", type=float, default=None)(fn)
    fn = click.option("--beta2", type=float, default=None)(fn)
    fn = click.option("--lambda-l", "lambda_l", type=float, default=None)(fn)
    fn = click.option("--lambda-p", "lambda_p", type=float, default=None)(fn)
    fn = click.option("--k", type=int, default=None)(fn)
    fn = click.option("--squared-weight-norm", type=bool, default=None)(fn)
    fn = click.option("--stem-channels", type=int, default=None)(fn)
    fn = click.option("--cl-schedule", default=None, metavar="C1,..,C6")(fn)
    fn = click.option("--head-channels", type=int, default=None)(fn)
    fn = click.option("--eval-batch-size", type=int, default=None)(fn)
    return fn


def _merge_config(ctx, config_path, allowed):
    values = {}
    if config_path:
        try:
            text = open(config_path, encoding="utf-8").read()
            parsed = parse_config_text(text)
        except (OSError, ValueError) as exc:
            raise click.ClickException(f"bad config file: {exc}")
        for key, val in parsed.items():
            if key not in allowed:
                raise click.ClickException(f"config key {key!r} not valid here")
            values[key] = val
    for key, val in _explicit_params(ctx).items():
        if key in ("config", "server"):
            continue
        if key == "cl_schedule" and isinstance(val, str):
            val = _schedule(val)
        values[key] = val
    if "cl_schedule" in values:
        values["cl_schedule"] = list(values["cl_schedule"])
    return values


@main.command()
@click.option("--config", type=click.Path(exists=True, dir_okay=False), default=None,
              help="Flat key = value config file; flags override.")
@_train_options
@server_option
@click.pass_context
def train(ctx, config, server, **_):
    """Train one configuration and persist checkpoint, logs, and metrics."""
    values = _merge_config(ctx, config, set(_TRAIN_KEYS))
    if "dataset" not in values or "out_dir" not in values:
        raise click.ClickException("dataset and out_dir are required (flag or config)")
    req = schemas.TrainRequest(**values)
    resp = _dispatch("train", req, server)
    for split in ("train", "test"):
        grp = getattr(resp.metrics, split)
        click.echo("  ".join(
            f"{split} {name} {m.mae_mm:.4f}+-{m.std_mm:.4f} mm"
            for name, m in grp.items()
        ))
    click.echo(f"checkpoint: {resp.checkpoint}")
    click.echo(f"metrics:    {resp.metrics_csv}")


@main.command()
@click.option("--checkpoint", required=True)
@click.option("--dataset", required=True)
@click.option("--out-dir", "out_dir", default=None,
              help="Also write metrics.csv and report.txt here.")
@server_option
def evaluate(server, **kwargs):
    """Evaluate a checkpoint on a dataset (both splits)."""
    req = schemas.EvaluateRequest(**kwargs)
    resp = _dispatch("evaluate", req, server)
    for split in ("train", "test"):
        grp = getattr(resp.metrics, split)
        for name, m in grp.items():
            click.echo(f"{split:<6} {name:<6} {m.mae_mm:.4f}+-{m.std_mm:.4f} mm")
    if resp.metrics_csv:
        click.echo(f"metrics: {resp.metrics_csv}")


_ABLATION_KEYS = list(schemas.AblationRequest.model_fields)


@main.command()
@click.option("--config", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--dataset", default=None)
@click.option("--out-dir", "out_dir", default=None)
@click.option("--seeds", default=None, metavar="S1,S2,..")
@click.option("--epochs", type=int, default=None)
@click.option("--batch-size", type=int, default=None)
@click.option("--learning-rate", type=float, default=None)
@click.option("--lambda-l", "lambda_l", type=float, default=None)
@click.option("--lambda-p", "lambda_p", type=float, default=None)
@click.option("--k", type=int, default=None)
@click.option("--stem-channels", type=int, default=None)
@click.option("--cl-schedule", default=None, metavar="C1,..,C6")
@click.option("--head-channels", type=int, default=None)
@click.option("--eval-batch-size", type=int, default=None)
@server_option
@click.pass_context
def ablation(ctx, config, server, **_):
    """Run the four-configuration comparison across seeds."""
    values = _merge_config(ctx, config, set(_ABLATION_KEYS) | {"seeds"})
    if isinstance(values.get("seeds"), str):
        values["seeds"] = [int(s) for s in values["seeds"].split(",") if s.strip()]
    if "dataset" not in values or "out_dir" not in values:
        raise click.ClickException("dataset and out_dir are required (flag or config)")
    req = schemas.AblationRequest(**values)
    resp = _dispatch("ablation", req, server)
    for cell in resp.cells:
        click.echo(f"{cell.config:<12} {cell.split:<6} {cell.group:<6} "
                   f"{cell.mae_mm:.4f}+-{cell.std_mm:.4f} mm")
    for key, val in resp.findings.items():
        click.echo(f"finding {key}: {val}")
    click.echo(f"report: {resp.report_txt}")


@main.command()
@click.option("--scope", default="all", show_default=True,
              help="An op name, 'ops', 'au', 'model', 'loss', or 'all'.")
@click.option("--seed", default=20240817, show_default=True)
@server_option
def gradcheck(server, **kwargs):
    """Compare analytic gradients with finite differences; nonzero exit on failure."""
    req = schemas.GradcheckRequest(**kwargs)
    resp = _dispatch("gradcheck", req, server)
    for g in resp.groups:
        status = "pass" if g.passed else "FAIL"
        click.echo(f"{status}  {g.name}: max_rel_err={g.max_rel_err:.3e} "
                   f"checked={g.checked} degenerate={g.degenerate}")
    verdict = "PASS" if resp.passed else "FAIL"
    click.echo(f"{verdict}  scope={resp.scope} worst={resp.worst:.3e} "
               f"({resp.seconds:.1f}s)")
    if not resp.passed:
        raise SystemExit(1)


@main.command()
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8000, show_default=True)
def serve(host, port):
    """Run the HTTP service."""
    import uvicorn

    from .service import app

    uvicorn.run(app, host=host, port=port)


if __name__ == "__main__":
    main()
