import json

import pytest
from click.testing import CliRunner

from sqldst.cli import main
from sqldst.dialogues import load_dialogues, sample_pool
from sqldst.ontology import bundled_ontology
from sqldst.pipeline import RunConfig, gold_echo_table
from sqldst.retrieval import HashingEmbedder, embed_pool, save_pool


@pytest.fixture()
def runner():
    return CliRunner()


@pytest.fixture(scope="module")
def workdir(tmp_path_factory, data_dir):
    """Shared scratch dir with a pool file and gold-echo fixtures."""
    root = tmp_path_factory.mktemp("cli")
    test_set = load_dialogues(data_dir / "dialogues_10.jsonl")
    pool = sample_pool(test_set, 1.0, seed=3)
    save_pool(pool, root / "pool.jsonl")
    cfg = RunConfig(k_exemplars=3, retriever_kind="embedding", budget=8000)
    table = gold_echo_table(test_set, cfg, bundled_ontology("multiwoz"), pool)
    with open(root / "fixtures.jsonl", "w") as f:
        for h, c in table.items():
            f.write(json.dumps({"prompt_sha256": h, "completion": c}) + "\n")
    return root


RUN_FLAGS = ["--retriever", "embedding", "--k", "3", "--budget", "8000"]


def test_ingest(runner, data_dir, tmp_path):
    out = tmp_path / "normalized.jsonl"
    result = runner.invoke(main, ["ingest", str(data_dir / "dialogues_10.jsonl"),
                                  "--out", str(out)])
    assert result.exit_code == 0, result.output
    assert "10 dialogues" in result.output
    assert out.exists()


def test_sample_pool_cmd(runner, data_dir, tmp_path):
    out = tmp_path / "pool.jsonl"
    result = runner.invoke(main, ["sample-pool", str(data_dir / "dialogues_10.jsonl"),
                                  "--fraction", "0.5", "--seed", "7", "--out", str(out)])
    assert result.exit_code == 0, result.output
    assert "sampled 5 dialogues" in result.output


def test_embed_import_and_mine_and_export(runner, workdir, tmp_path, data_dir):
    # attach stub embeddings through the documented embeddings-file interface
    test_set = load_dialogues(data_dir / "dialogues_10.jsonl")
    pool = embed_pool(sample_pool(test_set, 1.0, seed=3), HashingEmbedder())
    emb_file = tmp_path / "emb.jsonl"
    with open(emb_file, "w") as f:
        for r in pool.records:
            f.write(json.dumps({"id": r.id, "vector": list(r.embedding)}) + "\n")
    pool_out = tmp_path / "pool_emb.jsonl"
    result = runner.invoke(main, ["embed-import", str(workdir / "pool.jsonl"),
                                  str(emb_file), "--out", str(pool_out)])
    assert result.exit_code == 0, result.output

    pairs_out = tmp_path / "pairs.jsonl"
    result = runner.invoke(main, ["mine-pairs", str(pool_out),
                                  "--neighbor-frac", "0.2", "--select-frac", "0.05",
                                  "--out", str(pairs_out)])
    assert result.exit_code == 0, result.output
    assert pairs_out.read_text().count("\n") == 1 + len(pool.records)

    texts_out = tmp_path / "texts.jsonl"
    result = runner.invoke(main, ["export-pairs", str(pool_out), str(pairs_out),
                                  "--out", str(texts_out)])
    assert result.exit_code == 0, result.output
    first = json.loads(texts_out.read_text().split("\n")[0])
    assert set(first) == {"query", "positives", "negatives"}


def test_mine_pairs_stub_flag(runner, workdir, tmp_path):
    pairs_out = tmp_path / "pairs.jsonl"
    result = runner.invoke(main, ["mine-pairs", str(workdir / "pool.jsonl"),
                                  "--stub-embeddings", "--select-count", "2",
                                  "--out", str(pairs_out)])
    assert result.exit_code == 0, result.output


def test_retrieve_debug(runner, workdir):
    result = runner.invoke(main, ["retrieve", str(workdir / "pool.jsonl"),
                                  "--query", "[context] \n[system] \nQ: [user] i need a taxi",
                                  "--k", "3"])
    assert result.exit_code == 0, result.output
    assert len(result.output.strip().split("\n")) == 3


def test_prompt_command(runner, data_dir, workdir):
    result = runner.invoke(main, [
        "prompt", str(data_dir / "dialogues_10.jsonl"),
        "--dialogue-id", "dlg000", "--turn", "0",
        "--pool", str(workdir / "pool.jsonl"), *RUN_FLAGS])
    assert result.exit_code == 0, result.output
    assert result.output.startswith("CREATE TABLE hotel(")
    assert result.output.endswith("SQL: SELECT * FROM")


def test_prompt_command_unknown_dialogue(runner, data_dir, workdir):
    result = runner.invoke(main, [
        "prompt", str(data_dir / "dialogues_10.jsonl"),
        "--dialogue-id", "nope", "--turn", "0",
        "--pool", str(workdir / "pool.jsonl")])
    assert result.exit_code != 0


def test_run_scripted_and_score_roundtrip(runner, data_dir, workdir, tmp_path):
    outdir = tmp_path / "out"
    result = runner.invoke(main, [
        "run", str(data_dir / "dialogues_10.jsonl"),
        "--pool", str(workdir / "pool.jsonl"), *RUN_FLAGS,
        "--backend", "scripted", "--scripted-fixtures", str(workdir / "fixtures.jsonl"),
        "--outdir", str(outdir)])
    assert result.exit_code == 0, result.output
    assert "JGA 1.0000" in result.output
    report = json.loads((outdir / "report.json").read_text())
    assert report["jga_all"] == 1.0

    rescored = tmp_path / "rescored"
    result = runner.invoke(main, ["score", str(outdir / "traces.jsonl"),
                                  "--outdir", str(rescored), "--no-figures"])
    assert result.exit_code == 0, result.output
    assert (json.loads((rescored / "report.json").read_text())["jga_all"]
            == report["jga_all"])


def test_run_determinism_bit_identical(runner, data_dir, workdir, tmp_path):
    outs = []
    for name in ("a", "b"):
        outdir = tmp_path / name
        result = runner.invoke(main, [
            "run", str(data_dir / "dialogues_10.jsonl"),
            "--pool", str(workdir / "pool.jsonl"), *RUN_FLAGS,
            "--seed", "13", "--retriever", "random",
            "--backend", "scripted", "--scripted-fixtures", str(workdir / "fixtures.jsonl"),
            "--outdir", str(outdir), "--no-figures"])
        assert result.exit_code == 0, result.output
        outs.append((outdir / "report.json").read_bytes())
    assert outs[0] == outs[1]


def test_run_echo_backend(runner, data_dir, workdir, tmp_path):
    outdir = tmp_path / "echo"
    result = runner.invoke(main, [
        "run", str(data_dir / "dialogues_10.jsonl"),
        "--pool", str(workdir / "pool.jsonl"), *RUN_FLAGS,
        "--backend", "echo", "--echo-text", " none;",
        "--outdir", str(outdir), "--no-figures"])
    assert result.exit_code == 0, result.output


def test_run_zero_shot(runner, data_dir, tmp_path):
    # zero-shot needs no pool; echo backend answers the empty change
    outdir = tmp_path / "zs"
    result = runner.invoke(main, [
        "run", str(data_dir / "dialogues_10.jsonl"), "--zero-shot", "--budget", "8000",
        "--backend", "echo", "--echo-text", " none;",
        "--outdir", str(outdir), "--no-figures"])
    assert result.exit_code == 0, result.output


def test_copy_baseline_cmd(runner, data_dir, workdir, tmp_path):
    outdir = tmp_path / "copy"
    result = runner.invoke(main, [
        "copy-baseline", str(data_dir / "dialogues_10.jsonl"),
        "--pool", str(workdir / "pool.jsonl"), "--retriever", "oracle",
        "--outdir", str(outdir), "--no-figures"])
    assert result.exit_code == 0, result.output
    assert "copy-baseline JGA 1.0000" in result.output


def test_run_multi_seed_summary(runner, data_dir, tmp_path):
    outdir = tmp_path / "multi"
    result = runner.invoke(main, [
        "run", str(data_dir / "dialogues_10.jsonl"),
        "--train", str(data_dir / "dialogues_10.jsonl"), "--fraction", "0.5",
        "--budget", "8000", "--k", "3",
        "--backend", "echo", "--echo-text", " none;",
        "--seeds", "0,1,2", "--outdir", str(outdir)])
    assert result.exit_code == 0, result.output
    summary = json.loads((outdir / "summary.json").read_text())
    assert summary["seeds"] == [0, 1, 2]
    assert "mean" in summary["jga_all"] and "stdev" in summary["jga_all"]
    assert "mean" in result.output


def test_run_seeds_requires_train(runner, data_dir, tmp_path):
    result = runner.invoke(main, [
        "run", str(data_dir / "dialogues_10.jsonl"),
        "--backend", "echo", "--seeds", "0,1", "--outdir", str(tmp_path / "x")])
    assert result.exit_code != 0
    assert "--train" in result.output


def test_config_file_seeds_flags(runner, data_dir, tmp_path, workdir):
    cfg_file = tmp_path / "cfg.json"
    cfg_file.write_text(json.dumps({"fraction": 0.5, "seed": 7, "out": str(tmp_path / "p.jsonl")}))
    result = runner.invoke(main, ["sample-pool", str(data_dir / "dialogues_10.jsonl"),
                                  "--config", str(cfg_file)])
    assert result.exit_code == 0, result.output
    assert "sampled 5 dialogues" in result.output
