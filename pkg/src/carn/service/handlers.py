"""Request handlers shared by the HTTP app and the local-mode CLI.

Each handler maps a request model onto the core package and wraps the
outcome in the matching response model; no experiment logic lives here.
"""

from __future__ import annotations

from pathlib import Path

from .. import ablation as ablation_mod
from .. import gradcheck as gradcheck_mod
from .. import phantom, training
from ..experiment import ExperimentConfig
from . import schemas


def _metrics_payload(report):
    payload = report.payload()
    return schemas.MetricsPayload(
        train={g: schemas.GroupMetrics(**v) for g, v in payload.get("train", {}).items()},
        test={g: schemas.GroupMetrics(**v) for g, v in payload.get("test", {}).items()},
    )


def handle_generate(req: schemas.GenerateRequest) -> schemas.GenerateResponse:
    spacing = req.pixel_spacing
    if spacing is None:
        spacing = phantom.desk_pixel_spacing(req.image_h)
    spec = phantom.PhantomSpec(
        latent_dim=req.latent_dim,
        pixel_spacing=spacing,
        image_hw=(req.image_h, req.image_w),
        noise_sigma=req.noise_sigma,
        ambiguity_prob=req.ambiguity_prob,
    )
    manifest = phantom.generate_dataset(
        req.n, spec, req.seed, req.out_dir, train_fraction=req.train_fraction
    )
    n_train = sum(1 for s in manifest.samples if s.split == "train")
    return schemas.GenerateResponse(
        manifest_path=str(Path(req.out_dir) / "manifest.json"),
        n=manifest.n,
        image_hw=list(manifest.image_hw),
        pixel_spacing=manifest.pixel_spacing,
        n_train=n_train,
        n_test=manifest.n - n_train,
    )


def _experiment_config(req: schemas.TrainRequest) -> ExperimentConfig:
    return ExperimentConfig(
        dataset=req.dataset, out_dir=req.out_dir, variant=req.variant,
        loss=req.loss, seed=req.seed, epochs=req.epochs,
        batch_size=req.batch_size, learning_rate=req.learning_rate,
        beta1=req.beta1, beta2=req.beta2, lambda_l=req.lambda_l,
        lambda_p=req.lambda_p, k=req.k,
        squared_weight_norm=req.squared_weight_norm,
        stem_channels=req.stem_channels, cl_schedule=tuple(req.cl_schedule),
        head_channels=req.head_channels, eval_batch_size=req.eval_batch_size,
    )


def handle_train(req: schemas.TrainRequest) -> schemas.TrainResponse:
    result = training.train(_experiment_config(req))
    return schemas.TrainResponse(
        checkpoint=result.checkpoint,
        training_log=result.training_log,
        metrics_csv=result.metrics_csv,
        report_txt=result.report_txt,
        metrics=_metrics_payload(result.report),
    )


def handle_evaluate(req: schemas.EvaluateRequest) -> schemas.EvaluateResponse:
    report = training.evaluate(req.checkpoint, req.dataset)
    metrics_csv = report_txt = None
    if req.out_dir:
        out = Path(req.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        metrics_csv = str(out / "metrics.csv")
        report_txt = str(out / "report.txt")
        report.write_csv(metrics_csv)
        Path(report_txt).write_text(report.text() + "\n", encoding="utf-8")
    return schemas.EvaluateResponse(
        metrics=_metrics_payload(report), metrics_csv=metrics_csv, report_txt=report_txt
    )


def handle_ablation(req: schemas.AblationRequest, progress=None) -> schemas.AblationResponse:
    base = ExperimentConfig(
        dataset=req.dataset, out_dir=req.out_dir, epochs=req.epochs,
        batch_size=req.batch_size, learning_rate=req.learning_rate,
        lambda_l=req.lambda_l, lambda_p=req.lambda_p, k=req.k,
        stem_channels=req.stem_channels, cl_schedule=tuple(req.cl_schedule),
        head_channels=req.head_channels, eval_batch_size=req.eval_batch_size,
    )
    result = ablation_mod.run_ablation(base, req.seeds, progress=progress)
    cells = [
        schemas.AblationCell(
            config=name, split=split, group=group,
            mae_mm=result.cells[(name, split, group)],
            std_mm=result.std_cells[(name, split, group)],
        )
        for name in ablation_mod.CONFIG_ORDER
        for split in ("train", "test")
        for group in training.GROUPS
    ]
    out = Path(req.out_dir)
    return schemas.AblationResponse(
        cells=cells,
        findings=result.findings,
        report_txt=str(out / "report.txt"),
        csv_path=str(out / "ablation.csv"),
    )


def handle_gradcheck(req: schemas.GradcheckRequest) -> schemas.GradcheckResponse:
    report = gradcheck_mod.run_gradcheck(req.scope, seed=req.seed)
    return schemas.GradcheckResponse(
        scope=report.scope,
        passed=report.passed,
        worst=report.worst,
        seconds=report.seconds,
        groups=[
            schemas.GradcheckGroup(
                name=g.name, max_rel_err=g.max_rel_err, checked=g.checked,
                degenerate=g.degenerate, passed=g.passed,
            )
            for g in report.groups
        ],
    )
