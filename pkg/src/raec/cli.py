"""Batch command-line interface.

Subcommands: ingest, sample, index build, check, evaluate
{concordance|mcnemar|metrics}, retrieve-eval, report, induct, taxonomy
{validate|apply}, serve. Exit codes: 0 success, 1 validation/usage failure,
2 I/O or backend failure. Randomized commands accept --seed.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from . import corpus as corpus_mod
from . import evalstats as stats_mod
from . import induction as induction_mod
from . import judge as judge_mod
from . import reporting as reporting_mod
from . import retrieval as retrieval_mod
from .config import ServiceConfig, load_config
from .embedding import make_embedder
from .errors import BackendError, RaecError, ValidationError
from .llm import make_backend
from .taxonomy import label_universe, load_taxonomy, save_taxonomy, seed_taxonomy


@click.group()
@click.option("--config", "config_path", type=click.Path(), default=None,
              help="Path to the JSON config file.")
@click.pass_context
def cli(ctx: click.Context, config_path: str | None) -> None:
    """Guardrail engine for LLM-drafted patient-portal replies."""
    ctx.obj = load_config(config_path)


def _config(ctx: click.Context) -> ServiceConfig:
    return ctx.obj


# --- ingest -------------------------------------------------------------


@cli.command()
@click.option("--input", "input_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--report", "report_path", type=click.Path(), default=None)
@click.option("--dedupe-text-field", default="patient_message", show_default=True)
def ingest(input_path: str, out_path: str, report_path: str | None,
           dedupe_text_field: str) -> None:
    """Ingest raw JSON-lines records into clean, deduplicated triplets."""
    triplets, report = corpus_mod.ingest_path(input_path)
    deduped = corpus_mod.dedupe(triplets, text_field=dedupe_text_field)
    report.duplicates_collapsed = len(triplets) - len(deduped)
    corpus_mod.write_triplets(deduped, out_path)
    if report_path:
        Path(report_path).write_text(
            json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    click.echo(
        f"accepted={report.accepted_count} rejected={report.rejected_count} "
        f"duplicates_collapsed={report.duplicates_collapsed} -> {out_path}"
    )


# --- sampling -----------------------------------------------------------


@cli.group()
def sample() -> None:
    """Draw the documented sampling regimes from a clean triplet file."""


@sample.command("stratified")
@click.option("--triplets", "triplets_path", required=True, type=click.Path(exists=True))
@click.option("--n", required=True, type=int)
@click.option("--stratum", default="specialty", show_default=True)
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--manifest", "manifest_path", type=click.Path(), default=None)
def sample_stratified(triplets_path: str, n: int, stratum: str, seed: int,
                      out_path: str, manifest_path: str | None) -> None:
    """Stratified sample preserving the observed stratum distribution."""
    triplets = corpus_mod.load_triplets(triplets_path)
    picked, manifest = corpus_mod.stratified_sample(triplets, n, stratum=stratum, seed=seed)
    corpus_mod.write_triplets(picked, out_path)
    if manifest_path:
        Path(manifest_path).write_text(
            json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    click.echo(f"sampled {len(picked)} of {len(triplets)} -> {out_path}")


@sample.command("balanced")
@click.option("--triplets", "triplets_path", required=True, type=click.Path(exists=True))
@click.option("--verdicts", "verdicts_path", required=True, type=click.Path(exists=True),
              help="Verdicts supplying the has-error flag per triplet (paired by order).")
@click.option("--n", required=True, type=int)
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--manifest", "manifest_path", type=click.Path(), default=None)
def sample_balanced(triplets_path: str, verdicts_path: str, n: int, seed: int,
                    out_path: str, manifest_path: str | None) -> None:
    """1:1 sample of error-flagged vs clean messages."""
    triplets = corpus_mod.load_triplets(triplets_path)
    verdicts = judge_mod.load_verdicts(verdicts_path)
    if len(verdicts) != len(triplets):
        raise ValidationError(
            f"{len(verdicts)} verdicts vs {len(triplets)} triplets; cannot pair them")
    scored = [(t, bool(v.assignments)) for t, v in zip(triplets, verdicts)]
    picked, manifest = corpus_mod.balanced_sample(scored, n, seed=seed)
    corpus_mod.write_triplets(picked, out_path)
    if manifest_path:
        Path(manifest_path).write_text(
            json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    click.echo(f"sampled {len(picked)} (shortfall {manifest['shortfall']}) -> {out_path}")


# --- index ---------------------------------------------------------------


@cli.group()
def index() -> None:
    """Vector index over the archived message-response pairs."""


@index.command("build")
@click.option("--triplets", "triplets_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_base", required=True, type=click.Path())
@click.pass_context
def index_build(ctx: click.Context, triplets_path: str, out_base: str) -> None:
    """Embed patient messages and persist the index."""
    config = _config(ctx)
    triplets = corpus_mod.load_triplets(triplets_path)
    embedder = make_embedder(config.embedder)
    idx = retrieval_mod.build_index(triplets, embedder)
    vec_path, meta_path = retrieval_mod.save_index(idx, out_base)
    click.echo(f"indexed {len(idx)} entries (dim {idx.dim}) -> {vec_path}, {meta_path}")


# --- check ---------------------------------------------------------------


@cli.command()
@click.option("--triplets", "triplets_path", required=True, type=click.Path(exists=True))
@click.option("--mode", type=click.Choice(judge_mod.MODES), default=None,
              help="Defaults to the configured mode.")
@click.option("--index", "index_base", type=click.Path(), default=None)
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--labels-out", "labels_path", type=click.Path(), default=None,
              help="Also write the verdict labels as an annotation JSONL.")
@click.option("--source", default=None, help="Source tag for --labels-out.")
@click.pass_context
def check(ctx: click.Context, triplets_path: str, mode: str | None, index_base: str | None,
          out_path: str, labels_path: str | None, source: str | None) -> None:
    """Run the two-stage guardrail over a triplet file."""
    config = _config(ctx)
    mode = mode or config.mode_default
    index_base = index_base or (config.index_path or None)
    if mode == judge_mod.MODE_ENHANCED and not index_base:
        raise ValidationError("--mode enhanced requires --index (or index_path in config)")
    triplets = corpus_mod.load_triplets(triplets_path)
    embedder = make_embedder(config.embedder)
    backend = make_backend(config.llm)
    idx = retrieval_mod.load_index(index_base, embedder=embedder) if index_base else None
    judge_config = judge_mod.JudgeConfig(
        k=config.k,
        relax_filters=config.relax_filters,
        fail_hard_on_retrieval_error=config.fail_hard_on_retrieval_error,
    )
    inputs = [
        judge_mod.GuardrailInput(
            patient_message=t.patient_message,
            llm_draft=t.llm_draft,
            metadata={
                "recipient_name": t.recipient_name,
                "department": t.department,
                "specialty": t.specialty,
            },
            mode=mode,
            thread_id=t.thread_id,
            message_id=t.thread_id,
        )
        for t in triplets
    ]
    verdicts = judge_mod.check_batch(
        inputs, load_taxonomy(_taxonomy_path(config)), backend,
        retriever=idx if mode == judge_mod.MODE_ENHANCED else None,
        config=judge_config,
    )
    judge_mod.write_verdicts(verdicts, out_path, include_timings=config.include_timings)
    if labels_path:
        ann = judge_mod.annotation_set_from_verdicts(verdicts, source or mode)
        stats_mod.write_annotation_set(ann, labels_path)
    flagged = sum(1 for v in verdicts if v.assignments)
    click.echo(f"checked {len(verdicts)} messages, {flagged} flagged -> {out_path}")


def _taxonomy_path(config: ServiceConfig) -> str:
    if not config.taxonomy_path:
        raise ValidationError("no taxonomy_path configured; set it in the config file")
    return config.taxonomy_path


# --- evaluate -------------------------------------------------------------


@cli.group()
def evaluate() -> None:
    """Agreement and performance statistics against reference annotations."""


def _load_level_taxonomy(taxonomy_path: str | None, ctx: click.Context):
    config = _config(ctx)
    path = taxonomy_path or config.taxonomy_path
    if not path:
        raise ValidationError("supply --taxonomy or set taxonomy_path in the config")
    return load_taxonomy(path)


@evaluate.command("concordance")
@click.option("--reference", "reference_path", required=True, type=click.Path(exists=True))
@click.option("--predicted", "predicted_path", required=True, type=click.Path(exists=True))
@click.option("--level", type=click.Choice(["code", "subdomain", "domain"]), default="code",
              show_default=True)
@click.option("--taxonomy", "taxonomy_path", type=click.Path(exists=True), default=None)
@click.option("--out", "out_path", type=click.Path(), default=None)
@click.pass_context
def evaluate_concordance(ctx: click.Context, reference_path: str, predicted_path: str,
                         level: str, taxonomy_path: str | None, out_path: str | None) -> None:
    """Per-message strict set agreement at a hierarchy level."""
    t = _load_level_taxonomy(taxonomy_path, ctx)
    ref = stats_mod.load_annotation_set(reference_path)
    pred = stats_mod.load_annotation_set(predicted_path)
    result = stats_mod.concordance(ref, pred, level, t)
    if out_path:
        reporting_mod.write_json_report(result.to_dict(), out_path)
    click.echo(
        f"concordance[{level}] {result.source_a} vs {result.source_b}: "
        f"{result.concordant_count}/{result.total} ({100.0 * result.rate:.1f}%)"
    )


@evaluate.command("mcnemar")
@click.option("--reference", "reference_path", required=True, type=click.Path(exists=True))
@click.option("--a", "a_path", required=True, type=click.Path(exists=True))
@click.option("--b", "b_path", required=True, type=click.Path(exists=True))
@click.option("--level", type=click.Choice(["code", "subdomain", "domain"]), default="code",
              show_default=True)
@click.option("--taxonomy", "taxonomy_path", type=click.Path(exists=True), default=None)
@click.option("--out", "out_path", type=click.Path(), default=None)
@click.pass_context
def evaluate_mcnemar(ctx: click.Context, reference_path: str, a_path: str, b_path: str,
                     level: str, taxonomy_path: str | None, out_path: str | None) -> None:
    """Paired comparison of two sources' concordance with the reference."""
    t = _load_level_taxonomy(taxonomy_path, ctx)
    ref = stats_mod.load_annotation_set(reference_path)
    conc_a = stats_mod.concordance(ref, stats_mod.load_annotation_set(a_path), level, t)
    conc_b = stats_mod.concordance(ref, stats_mod.load_annotation_set(b_path), level, t)
    chi = stats_mod.mcnemar_from_concordance(conc_a, conc_b, method=stats_mod.METHOD_CHI2_CC)
    exact = stats_mod.mcnemar_from_concordance(conc_a, conc_b, method=stats_mod.METHOD_EXACT)
    payload = {
        "level": level,
        "concordance_a": conc_a.to_dict() | {"per_message": None},
        "concordance_b": conc_b.to_dict() | {"per_message": None},
        "chi_square_cc": chi.to_dict(),
        "exact": exact.to_dict(),
    }
    if out_path:
        reporting_mod.write_json_report(payload, out_path)
    click.echo(
        f"mcnemar[{level}] b={chi.b} c={chi.c} "
        f"chi2-cc statistic={chi.statistic:.3f} p={chi.p_value:.4f} | exact p={exact.p_value:.4f}"
    )


@evaluate.command("metrics")
@click.option("--reference", "reference_path", required=True, type=click.Path(exists=True))
@click.option("--predicted", "predicted_path", required=True, type=click.Path(exists=True))
@click.option("--level", type=click.Choice(["code", "subdomain", "domain"]), default="code",
              show_default=True)
@click.option("--universe", type=click.Choice(["full", "observed"]), default="observed",
              show_default=True)
@click.option("--taxonomy", "taxonomy_path", type=click.Path(exists=True), default=None)
@click.option("--out", "out_path", type=click.Path(), default=None)
@click.option("--text", "text_path", type=click.Path(), default=None)
@click.pass_context
def evaluate_metrics(ctx: click.Context, reference_path: str, predicted_path: str, level: str,
                     universe: str, taxonomy_path: str | None, out_path: str | None,
                     text_path: str | None) -> None:
    """Per-label confusion grid and micro-aggregated performance metrics."""
    t = _load_level_taxonomy(taxonomy_path, ctx)
    ref = stats_mod.load_annotation_set(reference_path)
    pred = stats_mod.load_annotation_set(predicted_path)
    labels = label_universe(level, universe, t, [ref, pred])
    counts = stats_mod.confusion(ref, pred, level, labels, t)
    micro = stats_mod.micro_totals(counts)
    payload = {
        "level": level,
        "universe_scope": universe,
        "universe": labels,
        "per_label": [
            c.to_dict() | {"metrics": stats_mod.metrics(c).to_dict()} for c in counts
        ],
        "micro": micro.to_dict() | {"metrics": stats_mod.metrics(micro).to_dict()},
        "macro_metrics": stats_mod.macro_metrics(counts).to_dict(),
    }
    table = reporting_mod.render_metrics_table([(f"{pred.source} ({level})", micro)])
    if out_path:
        reporting_mod.write_json_report(payload, out_path)
    if text_path:
        Path(text_path).write_text(table + "\n", encoding="utf-8")
    click.echo(table)


# --- retrieval evaluation ---------------------------------------------------


@cli.command("retrieve-eval")
@click.option("--judgments", "judgments_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", type=click.Path(), default=None)
def retrieve_eval(judgments_path: str, out_path: str | None) -> None:
    """Mean usefulness and mean Kendall tau over physician-judged queries."""
    judgments = retrieval_mod.load_judgments(judgments_path)
    result = retrieval_mod.evaluate_retrieval(judgments)
    if out_path:
        reporting_mod.write_json_report(result.to_dict(), out_path)
    click.echo(
        f"queries={result.n_queries} mean_usefulness={result.mean_usefulness:.3f} "
        f"mean_kendall_tau={result.mean_kendall_tau:.3f} "
        f"frac_with_any_helpful={result.frac_queries_with_any_helpful:.3f}"
    )


# --- report ------------------------------------------------------------------


@cli.command()
@click.option("--verdicts", "verdicts_path", required=True, type=click.Path(exists=True))
@click.option("--taxonomy", "taxonomy_path", type=click.Path(exists=True), default=None)
@click.option("--by-utilization", is_flag=True, default=False)
@click.option("--triplets", "triplets_path", type=click.Path(exists=True), default=None,
              help="Required with --by-utilization; pairs with verdicts by order.")
@click.option("--per-instance", is_flag=True, default=False,
              help="Use the per-error-instance frequency denominator.")
@click.option("--top", default=10, show_default=True, type=int)
@click.option("--out", "out_path", type=click.Path(), default=None)
@click.option("--text", "text_path", type=click.Path(), default=None)
@click.pass_context
def report(ctx: click.Context, verdicts_path: str, taxonomy_path: str | None,
           by_utilization: bool, triplets_path: str | None, per_instance: bool,
           top: int, out_path: str | None, text_path: str | None) -> None:
    """Summarize verdicts: error counts, code frequencies, utilization strata."""
    t = _load_level_taxonomy(taxonomy_path, ctx)
    verdicts = judge_mod.load_verdicts(verdicts_path)
    summary = reporting_mod.summarize(verdicts, t)
    payload: dict = {"summary": summary.to_dict()}
    sections = [reporting_mod.render_error_summary(summary, t)]
    if summary.total_errors > 0:
        freqs = reporting_mod.relative_frequencies(verdicts)
        payload["relative_frequencies"] = freqs
        sections.append(reporting_mod.render_frequency_table(freqs, k=top))
    if by_utilization:
        if not triplets_path:
            raise ValidationError("--by-utilization requires --triplets")
        triplets = corpus_mod.load_triplets(triplets_path)
        strat = reporting_mod.stratify_by_utilization(
            verdicts, triplets, per_message_denominator=not per_instance)
        payload["by_utilization"] = strat.to_dict()
        sections.append(reporting_mod.render_utilization_report(strat, k=top))
    text = "\n\n".join(sections)
    if out_path:
        reporting_mod.write_json_report(payload, out_path)
    if text_path:
        Path(text_path).write_text(text + "\n", encoding="utf-8")
    click.echo(text)


# --- induction ----------------------------------------------------------------


@cli.command()
@click.option("--triplets", "triplets_path", required=True, type=click.Path(exists=True))
@click.option("--taxonomy", "taxonomy_path", type=click.Path(exists=True), default=None)
@click.option("--out", "proposals_path", required=True, type=click.Path(),
              help="Review queue (proposal JSONL) consumed by `taxonomy apply`.")
@click.option("--labels-out", "labels_path", type=click.Path(), default=None)
@click.pass_context
def induct(ctx: click.Context, triplets_path: str, taxonomy_path: str | None,
           proposals_path: str, labels_path: str | None) -> None:
    """Label a corpus with the current taxonomy and stage proposed codes."""
    config = _config(ctx)
    t = _load_level_taxonomy(taxonomy_path, ctx)
    triplets = corpus_mod.load_triplets(triplets_path)
    backend = make_backend(config.llm)
    result = induction_mod.induct(triplets, t, backend)
    induction_mod.write_proposals(result.proposals, proposals_path)
    if labels_path:
        stats_mod.write_annotation_set(result.annotation_set(), labels_path)
    click.echo(
        f"labeled {len(result.labels)} messages, {len(result.proposals)} proposals, "
        f"{len(result.failures)} failures -> {proposals_path}"
    )
    for mid, why in sorted(result.failures.items()):
        click.echo(f"  failed {mid}: {why}", err=True)


# --- taxonomy ------------------------------------------------------------------


@cli.group("taxonomy")
def taxonomy_group() -> None:
    """Validate or evolve taxonomy documents."""


@taxonomy_group.command("validate")
@click.argument("path", type=click.Path(exists=True))
def taxonomy_validate(path: str) -> None:
    """Exit 0 if the document passes all invariants, 1 otherwise."""
    t = load_taxonomy(path)
    click.echo(
        f"ok: version {t.version}, {len(t.domains)} domains, "
        f"{len(t.subdomains)} subdomains, {len(t.codes)} codes"
    )


@taxonomy_group.command("apply")
@click.option("--taxonomy", "taxonomy_path", required=True, type=click.Path(exists=True))
@click.option("--proposals", "proposals_path", required=True, type=click.Path(exists=True))
@click.option("--decisions", "decisions_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
def taxonomy_apply(taxonomy_path: str, proposals_path: str, decisions_path: str,
                   out_path: str) -> None:
    """Apply reviewer decisions to staged proposals; write the new version."""
    t = load_taxonomy(taxonomy_path)
    proposals = induction_mod.load_proposals(proposals_path)
    decisions = induction_mod.load_decisions(decisions_path)
    new_t = induction_mod.merge_review(t, proposals, decisions)
    save_taxonomy(new_t, out_path)
    click.echo(f"version {t.version} -> {new_t.version}: {len(new_t.codes)} codes -> {out_path}")


@taxonomy_group.command("seed")
@click.option("--out", "out_path", required=True, type=click.Path())
def taxonomy_seed(out_path: str) -> None:
    """Write the shipped seed taxonomy (placeholder structure) to a file."""
    save_taxonomy(seed_taxonomy(), out_path)
    click.echo(f"seed taxonomy -> {out_path}")


# --- serve ----------------------------------------------------------------------


@cli.command()
@click.pass_context
def serve(ctx: click.Context) -> None:
    """Start the HTTP guardrail service (fails fast on invalid taxonomy/index)."""
    import uvicorn

    from .service import create_app

    config = _config(ctx)
    app = create_app(config)
    uvicorn.run(app, host=config.host, port=config.port)


def main() -> None:
    try:
        cli.main(standalone_mode=False)
    except click.ClickException as exc:
        exc.show()
        sys.exit(1)
    except click.Abort:
        sys.exit(1)
    except ValidationError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(1)
    except (BackendError, OSError) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(2)
    except RaecError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(2)


if __name__ == "__main__":
    main()
