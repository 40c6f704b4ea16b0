"""Command-line interface.

A single binary with subcommands covering the full workflow: ingest and
validate dialogue data, sample a selection pool, attach embeddings, mine
contrastive pairs, debug retrieval, inspect prompts, run experiments, and
re-score saved traces. Any flag can also come from a JSON config file via
--config; LM credentials come from the environment.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from sqldst import dialogues as dlg
from sqldst import pipeline as pl
from sqldst import report as rpt
from sqldst import retrieval as rtv
from sqldst.evaluation import build_report, copy_baseline
from sqldst.lm import make_backend
from sqldst.ontology import bundled_ontology, load_ontology
from sqldst.prompting import MOST_SIMILAR_FIRST, MOST_SIMILAR_LAST, REPRESENTATIONS


def _load_config(ctx, param, value):
    if value:
        with open(value, encoding="utf-8") as f:
            ctx.default_map = json.load(f)
    return value


CONFIG_OPTION = click.option(
    "--config", type=click.Path(exists=True), callback=_load_config,
    is_eager=True, expose_value=False,
    help="JSON file whose keys pre-seed any flag of this command.")


def _ontology(path_or_name):
    if path_or_name in ("multiwoz", "multiwoz-zeroshot"):
        return bundled_ontology(path_or_name)
    return load_ontology(path_or_name)


ONTOLOGY_OPTION = click.option(
    "--ontology", default="multiwoz", show_default=True,
    help="Bundled ontology name (multiwoz, multiwoz-zeroshot) or a JSON path.")


@click.group()
def main():
    """Dialogue state tracking via SQL-shaped in-context learning."""


@main.command()
@click.argument("data", type=click.Path(exists=True))
@click.option("--out", type=click.Path(), help="Write the normalized dialogues here.")
@CONFIG_OPTION
def ingest(data, out):
    """Validate and normalize a dialogue file."""
    records = dlg.load_dialogues(data)
    n_turns = sum(len(r.turns) for r in records)
    click.echo(f"{len(records)} dialogues, {n_turns} turns; accumulation check passed")
    if out:
        dlg.write_dialogues(records, out)
        click.echo(f"wrote {out}")


@main.command("sample-pool")
@click.argument("data", type=click.Path(exists=True))
@click.option("--fraction", type=float, required=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--representation", type=click.Choice(REPRESENTATIONS),
              default="prev_state_plus_turn", show_default=True)
@click.option("--out", type=click.Path(), required=True)
@CONFIG_OPTION
def sample_pool_cmd(data, fraction, seed, representation, out):
    """Sample whole dialogues into a selection pool of labeled turns."""
    records = dlg.load_dialogues(data)
    pool = dlg.sample_pool(records, fraction, seed, representation)
    rtv.save_pool(pool, out)
    n_dlg = len({r.id.rsplit(":", 1)[0] for r in pool.records})
    click.echo(f"sampled {n_dlg} dialogues -> {len(pool.records)} exemplars -> {out}")


@main.command("embed-import")
@click.argument("pool_path", type=click.Path(exists=True))
@click.argument("embeddings", type=click.Path(exists=True))
@click.option("--out", type=click.Path(), required=True)
@CONFIG_OPTION
def embed_import(pool_path, embeddings, out):
    """Attach externally computed embedding vectors to a pool."""
    pool = rtv.load_pool(pool_path)
    pool = rtv.import_embeddings(pool, embeddings)
    rtv.save_pool(pool, out)
    click.echo(f"pool with embeddings (dim {pool.embedding_dim}) -> {out}")


@main.command("mine-pairs")
@click.argument("pool_path", type=click.Path(exists=True))
@click.option("--neighbor-frac", type=float, default=0.10, show_default=True)
@click.option("--select-frac", type=float, default=0.05, show_default=True)
@click.option("--select-count", type=int, default=None,
              help="Absolute per-side count override.")
@click.option("--stub-embeddings", is_flag=True,
              help="Fill missing vectors with the hashing stub first.")
@click.option("--out", type=click.Path(), required=True)
@CONFIG_OPTION
def mine_pairs(pool_path, neighbor_frac, select_frac, select_count, stub_embeddings, out):
    """Mine contrastive positives/negatives for retriever finetuning."""
    pool = rtv.load_pool(pool_path)
    if stub_embeddings:
        pool = rtv.embed_pool(pool, rtv.HashingEmbedder())
    cfg = rtv.MiningConfig(neighbor_frac=neighbor_frac, select_frac=select_frac,
                           select_count=select_count)
    pairs = rtv.mine_contrastive_pairs(pool, cfg)
    rtv.export_pairs(pairs, out)
    click.echo(f"mined pairs for {len(pairs)} queries -> {out}")


@main.command("export-pairs")
@click.argument("pool_path", type=click.Path(exists=True))
@click.argument("pairs_path", type=click.Path(exists=True))
@click.option("--out", type=click.Path(), required=True)
@CONFIG_OPTION
def export_pairs_cmd(pool_path, pairs_path, out):
    """Join mined pair ids with pool texts for an external trainer."""
    pool = rtv.load_pool(pool_path)
    pairs = rtv.load_mined_pairs(pairs_path)
    with open(out, "w", encoding="utf-8") as f:
        for qid, (pos, neg) in pairs.entries.items():
            f.write(json.dumps({
                "query": pool.record(qid).context_text,
                "positives": [pool.record(i).context_text for i in pos],
                "negatives": [pool.record(i).context_text for i in neg],
            }) + "\n")
    click.echo(f"wrote training texts for {len(pairs)} queries -> {out}")


@main.command()
@click.argument("pool_path", type=click.Path(exists=True))
@click.option("--query", required=True, help="Query context text.")
@click.option("--retriever", "kind", type=click.Choice(rtv.RETRIEVER_KINDS),
              default="embedding", show_default=True)
@click.option("--k", type=int, default=5, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@CONFIG_OPTION
def retrieve(pool_path, query, kind, k, seed):
    """Ad-hoc retrieval debugging against a pool."""
    pool = rtv.load_pool(pool_path)
    retriever = rtv.make_retriever(kind, pool, seed=seed)
    ids = retriever.retrieve(rtv.RetrievalQuery(context_text=query), k)
    for rank, rid in enumerate(ids, 1):
        rec = pool.record(rid)
        preview = rec.context_text[:80].replace("\n", " | ")
        click.echo(f"{rank}\t{rid}\t{json.dumps(rec.change, sort_keys=True)}\t{preview}")


def _run_options(fn):
    opts = [
        click.option("--pool", "pool_path", type=click.Path(exists=True),
                     help="Prebuilt pool file (otherwise sample from --train)."),
        click.option("--train", type=click.Path(exists=True),
                     help="Training dialogues to sample the pool from."),
        click.option("--fraction", type=float, default=0.05, show_default=True),
        click.option("--seed", type=int, default=0, show_default=True),
        click.option("--retriever", "retriever_kind", type=click.Choice(rtv.RETRIEVER_KINDS),
                     default="embedding", show_default=True),
        click.option("--k", "k_exemplars", type=int, default=10, show_default=True),
        click.option("--format", "fmt", type=click.Choice(["sql", "traditional"]),
                     default="sql", show_default=True),
        click.option("--representation", type=click.Choice(REPRESENTATIONS),
                     default="prev_state_plus_turn", show_default=True),
        click.option("--conditioning",
                     type=click.Choice([pl.PREDICTED_PREV_STATE, pl.GOLD_PREV_STATE]),
                     default=pl.PREDICTED_PREV_STATE, show_default=True),
        click.option("--multi-domain-style",
                     type=click.Choice(["per_domain_statements", "renamed_aliases"]),
                     default="per_domain_statements", show_default=True),
        click.option("--budget", type=float, default=3600.0, show_default=True),
        click.option("--exemplar-order",
                     type=click.Choice([MOST_SIMILAR_LAST, MOST_SIMILAR_FIRST]),
                     default=MOST_SIMILAR_LAST, show_default=True),
        click.option("--zero-shot", is_flag=True),
    ]
    for opt in reversed(opts):
        fn = opt(fn)
    return fn


def _make_cfg(**kw):
    return pl.RunConfig(
        pool_fraction=kw["fraction"], seed=kw["seed"], k_exemplars=kw["k_exemplars"],
        retriever_kind=kw["retriever_kind"], representation=kw["representation"],
        format=kw["fmt"], conditioning=kw["conditioning"],
        multi_domain_style=kw["multi_domain_style"], budget=kw["budget"],
        exemplar_order=kw["exemplar_order"], zero_shot=kw["zero_shot"])


def _resolve_pool(pool_path, train, fraction, seed, representation):
    if pool_path:
        return rtv.load_pool(pool_path)
    if train:
        return dlg.sample_pool(dlg.load_dialogues(train), fraction, seed, representation)
    return rtv.ExemplarPool(())


@main.command()
@click.argument("data", type=click.Path(exists=True))
@click.option("--dialogue-id", required=True)
@click.option("--turn", type=int, required=True)
@ONTOLOGY_OPTION
@_run_options
@CONFIG_OPTION
def prompt(data, dialogue_id, turn, ontology, pool_path, train, **kw):
    """Emit the prompt for one turn (gold-conditioned)."""
    ont = _ontology(ontology)
    cfg = _make_cfg(**kw)
    records = dlg.load_dialogues(data)
    match = [d for d in records if d.id == dialogue_id]
    if not match:
        raise click.ClickException(f"no dialogue with id {dialogue_id}")
    d = match[0]
    if not 0 <= turn < len(d.turns):
        raise click.ClickException(f"turn {turn} out of range for {dialogue_id}")
    pool = _resolve_pool(pool_path, train, cfg.pool_fraction, cfg.seed, cfg.representation)
    prev = d.turns[turn - 1].state if turn else {}
    ctx = dlg.make_turn_context(d, turn, prev, cfg.representation)
    ids = []
    if not cfg.zero_shot and cfg.k_exemplars > 0 and pool.records:
        retriever = rtv.make_retriever(cfg.retriever_kind, pool, seed=cfg.seed)
        from sqldst.prompting import render_context
        ids = retriever.retrieve(
            rtv.RetrievalQuery(render_context(ctx), gold_change=d.gold_changes[turn]),
            cfg.k_exemplars)
    sys.stdout.write(pl.build_turn_prompt(ont, cfg, pool, ids, ctx))


@main.command()
@click.argument("data", type=click.Path(exists=True))
@ONTOLOGY_OPTION
@_run_options
@click.option("--backend", type=click.Choice(["scripted", "echo", "http"]), required=True)
@click.option("--scripted-fixtures", type=click.Path(exists=True))
@click.option("--echo-text", default="none;")
@click.option("--seeds", default=None,
              help="Comma-separated pool seeds: repeat the run per seed (needs --train) "
                   "and write a mean/stdev summary.")
@click.option("--outdir", type=click.Path(), required=True)
@click.option("--no-figures", is_flag=True)
@CONFIG_OPTION
def run(data, ontology, pool_path, train, backend, scripted_fixtures, echo_text,
        seeds, outdir, no_figures, **kw):
    """Run the full tracking experiment and write report, trace, and figures."""
    ont = _ontology(ontology)
    cfg = _make_cfg(**kw)
    test_set = dlg.load_dialogues(data)
    lm = make_backend(backend, scripted_path=scripted_fixtures, echo_text=echo_text)
    if seeds:
        if not train:
            raise click.ClickException("--seeds repeats pool sampling and needs --train")
        seed_list = [int(s) for s in seeds.split(",")]
        summary = pl.run_experiment_multi(test_set, cfg, dlg.load_dialogues(train),
                                          ont, lm, seed_list)
        out = Path(outdir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
        for metric in ("jga_all", "change_jga", "slot_value_f1"):
            m = summary[metric]
            click.echo(f"{metric}: mean {m['mean']:.4f} (stdev {m['stdev']:.4f})")
        click.echo(f"summary -> {out / 'summary.json'}")
        return
    pool = _resolve_pool(pool_path, train, cfg.pool_fraction, cfg.seed, cfg.representation)
    report, traces = pl.run_experiment(test_set, cfg, ont, pool, lm)
    path = rpt.write_report(report, outdir, traces, figures=not no_figures)
    click.echo(f"JGA {report.jga_all:.4f}  change-JGA {report.change_jga:.4f}  "
               f"F1 {report.slot_value_f1:.4f}  ({report.n_turns} turns)")
    click.echo(f"report -> {path}")


@main.command()
@click.argument("trace_file", type=click.Path(exists=True))
@ONTOLOGY_OPTION
@click.option("--outdir", type=click.Path(), required=True)
@click.option("--no-figures", is_flag=True)
@CONFIG_OPTION
def score(trace_file, ontology, outdir, no_figures):
    """Re-score a saved per-turn trace."""
    ont = _ontology(ontology)
    traces = pl.load_traces(trace_file)
    report = build_report(traces, domains=ont.domains)
    path = rpt.write_report(report, outdir, traces, figures=not no_figures)
    click.echo(f"JGA {report.jga_all:.4f}  change-JGA {report.change_jga:.4f}  "
               f"F1 {report.slot_value_f1:.4f}  ({report.n_turns} turns)")
    click.echo(f"report -> {path}")


@main.command("copy-baseline")
@click.argument("data", type=click.Path(exists=True))
@ONTOLOGY_OPTION
@_run_options
@click.option("--outdir", type=click.Path(), required=True)
@click.option("--no-figures", is_flag=True)
@CONFIG_OPTION
def copy_baseline_cmd(data, ontology, pool_path, train, outdir, no_figures, **kw):
    """Score the copy-the-nearest-exemplar baseline."""
    ont = _ontology(ontology)
    cfg = _make_cfg(**kw)
    test_set = dlg.load_dialogues(data)
    pool = _resolve_pool(pool_path, train, cfg.pool_fraction, cfg.seed, cfg.representation)
    retriever = rtv.make_retriever(cfg.retriever_kind, pool, seed=cfg.seed)
    report = copy_baseline(pool, retriever, test_set, cfg.representation, domains=ont.domains)
    path = rpt.write_report(report, outdir, figures=not no_figures)
    click.echo(f"copy-baseline JGA {report.jga_all:.4f}  F1 {report.slot_value_f1:.4f}")
    click.echo(f"report -> {path}")


if __name__ == "__main__":
    main()
