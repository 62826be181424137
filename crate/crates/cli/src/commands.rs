//! The seven subcommands. Each one wires files into the corresponding core
//! operation and leaves provenance to [`Ctx`].

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use anyhow::{anyhow, bail, Context as _};

use d2t_core::cooccur::CooccurrenceIndex;
use d2t_core::corpus::{corpus_to_string, Corpus, Instance, ParsedSentence, Split, Token, Upos};
use d2t_core::labeler::{filter_reference, identity_reparse, label_instance};
use d2t_core::mbd::{
    generate as decode, load_model, save_model, train as fit, BranchWeights, GenerateOptions,
    LabeledExample, MultiBranchModel, Vocab,
};
use d2t_core::metrics::{
    evaluate as score, EvalRecord, MetricReport, DEFAULT_LAMBDA_MIXING, DEFAULT_SMOOTHING,
};

use crate::context::{CliError, Ctx};

/// Decoding knobs shared by `generate` and `sweep`.
pub struct DecodeFlags {
    pub beam: usize,
    pub max_len: usize,
}

/// The inference-time weight grid swept by `sweep`, ordered from all-content
/// to all-fluency: first the hallucination share grows at fixed fluency, then
/// the fluency share grows at zero content.
pub const SWEEP_GRID: [[f64; 3]; 10] = [
    [0.5, 0.0, 0.5],
    [0.4, 0.1, 0.5],
    [0.3, 0.2, 0.5],
    [0.2, 0.3, 0.5],
    [0.1, 0.4, 0.5],
    [0.0, 0.5, 0.5],
    [0.0, 0.4, 0.6],
    [0.0, 0.3, 0.7],
    [0.0, 0.2, 0.8],
    [0.0, 0.1, 0.9],
];

pub fn build_index(ctx: &mut Ctx, corpus_path: &Path) -> Result<(), CliError> {
    let corpus = ctx.load_corpus_input(corpus_path, Split::Train)?;
    eprintln!("counting co-occurrences over {} instances", corpus.len());
    let index = CooccurrenceIndex::build_with_threads(&corpus, ctx.threads)
        .context("building index")?;
    eprintln!("{} non-zero cells", index.entry_count());
    ctx.write_output(index.to_file_string().as_bytes())
}

fn load_index(ctx: &mut Ctx, path: &Path) -> Result<CooccurrenceIndex, CliError> {
    ctx.record_input(path)?;
    let index = CooccurrenceIndex::load(path)
        .with_context(|| format!("loading index {}", path.display()))?;
    Ok(index)
}

pub fn label(
    ctx: &mut Ctx,
    corpus_path: &Path,
    index_path: &Path,
    split: Split,
) -> Result<(), CliError> {
    let corpus = ctx.load_corpus_input(corpus_path, split)?;
    let index = load_index(ctx, index_path)?;
    let cfg = ctx.config.labeler.clone();
    let mut out = String::new();
    for inst in &corpus.instances {
        let labeled = label_instance(inst, &index, &cfg);
        out.push_str(&inst.id);
        for (token, ann) in inst.reference.tokens.iter().zip(&labeled.annotations) {
            write!(out, " {}|{:.4}|{}", token.surface, ann.score, u8::from(ann.label))
                .expect("string write");
        }
        out.push('\n');
    }
    eprintln!("labeled {} instances", corpus.len());
    ctx.write_output(out.as_bytes())
}

pub fn filter(ctx: &mut Ctx, corpus_path: &Path, index_path: &Path) -> Result<(), CliError> {
    let corpus = ctx.load_corpus_input(corpus_path, Split::Train)?;
    let index = load_index(ctx, index_path)?;
    let cfg = ctx.config.labeler.clone();
    let mut kept = Vec::new();
    let mut emptied = 0usize;
    let mut dropped_tokens = 0usize;
    for inst in &corpus.instances {
        let labeled = label_instance(inst, &index, &cfg);
        let filtered = filter_reference(inst, &labeled.annotations);
        dropped_tokens += inst.reference.len() - filtered.tokens.len();
        if filtered.emptied {
            emptied += 1;
            continue;
        }
        // Surviving tokens lose their original heads, so the filtered
        // reference carries the flat placeholder parse.
        kept.push(Instance {
            id: inst.id.clone(),
            table: inst.table.clone(),
            reference: identity_reparse(&filtered.tokens),
        });
    }
    eprintln!(
        "kept {} of {} instances ({} emptied), removed {} tokens",
        kept.len(),
        corpus.len(),
        emptied,
        dropped_tokens
    );
    let filtered = Corpus { split: corpus.split, instances: kept };
    ctx.write_output(corpus_to_string(&filtered).as_bytes())
}

pub fn train(ctx: &mut Ctx, corpus_path: &Path, index_path: &Path) -> Result<(), CliError> {
    let corpus = ctx.load_corpus_input(corpus_path, Split::Train)?;
    let index = load_index(ctx, index_path)?;
    let cfg = ctx.config.labeler.clone();

    let mut examples = Vec::with_capacity(corpus.len());
    for inst in &corpus.instances {
        let labeled = label_instance(inst, &index, &cfg);
        examples.push(LabeledExample {
            id: inst.id.clone(),
            table: inst.table.clone(),
            target: inst.reference.surfaces(),
            labels: labeled.annotations.iter().map(|a| a.label).collect(),
        });
    }
    eprintln!("labeled {} training examples", examples.len());

    let words = corpus.instances.iter().flat_map(|inst| {
        let refs = inst.reference.tokens.iter().map(|t| t.surface.as_str());
        let table = inst
            .table
            .pairs
            .iter()
            .flat_map(|p| std::iter::once(p.key.as_str()).chain(p.value.iter().map(String::as_str)));
        refs.chain(table)
    });
    let vocab = Vocab::build(words, ctx.config.model.vocab_size);
    eprintln!("vocabulary of {} words", vocab.len());

    let mut model = MultiBranchModel::new(ctx.config.model.clone(), vocab)
        .context("constructing model")?;
    eprintln!(
        "training {} parameters for {} steps",
        model.parameter_count(),
        ctx.config.schedule.steps
    );
    let outcome = fit(&mut model, &examples, &ctx.config.schedule).context("training")?;
    if let (Some(first), Some(last)) = (outcome.step_losses.first(), outcome.step_losses.last()) {
        eprintln!("loss {first:.4} -> {last:.4}");
    }
    save_model(&model, ctx.out_path()).context("saving checkpoint")?;
    ctx.record_output(&ctx.out_path().to_path_buf())
}

fn load_checkpoint(ctx: &mut Ctx, path: &Path) -> Result<MultiBranchModel, CliError> {
    ctx.record_input(path)?;
    let model =
        load_model(path).with_context(|| format!("loading checkpoint {}", path.display()))?;
    Ok(model)
}

fn decode_corpus(
    model: &MultiBranchModel,
    corpus: &Corpus,
    weights: BranchWeights,
    flags: &DecodeFlags,
) -> Vec<(String, Vec<String>)> {
    let mut options = GenerateOptions::new(weights);
    options.beam_width = flags.beam;
    options.max_len = flags.max_len;
    corpus
        .instances
        .iter()
        .map(|inst| (inst.id.clone(), decode(model, &inst.table, &options).tokens))
        .collect()
}

fn predictions_to_string(predictions: &[(String, Vec<String>)]) -> String {
    let mut out = String::new();
    for (id, tokens) in predictions {
        out.push_str(id);
        out.push('\t');
        out.push_str(&tokens.join(" "));
        out.push('\n');
    }
    out
}

pub fn generate(
    ctx: &mut Ctx,
    corpus_path: &Path,
    model_path: &Path,
    weights: BranchWeights,
    flags: DecodeFlags,
) -> Result<(), CliError> {
    let corpus = ctx.load_corpus_input(corpus_path, Split::Test)?;
    let model = load_checkpoint(ctx, model_path)?;
    let predictions = decode_corpus(&model, &corpus, weights, &flags);
    eprintln!("generated {} sequences", predictions.len());
    ctx.write_output(predictions_to_string(&predictions).as_bytes())
}

fn parse_predictions(text: &str) -> anyhow::Result<Vec<(String, Vec<String>)>> {
    let mut seen = std::collections::HashSet::new();
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let (id, rest) = line
            .split_once('\t')
            .ok_or_else(|| anyhow!("predictions line {}: expected id<TAB>tokens", i + 1))?;
        if !seen.insert(id.to_string()) {
            bail!("predictions line {}: duplicate id `{id}`", i + 1);
        }
        out.push((id.to_string(), rest.split_whitespace().map(str::to_string).collect()));
    }
    Ok(out)
}

/// First part of speech observed for each reference surface, in corpus order.
fn pos_lexicon(corpus: &Corpus) -> BTreeMap<String, Upos> {
    let mut lexicon = BTreeMap::new();
    for inst in &corpus.instances {
        for token in &inst.reference.tokens {
            lexicon.entry(token.surface.clone()).or_insert(token.pos);
        }
    }
    lexicon
}

/// A single-statement parse of generated tokens, with parts of speech looked
/// up in the reference corpus (unknown words become `X`, which never scores).
fn fallback_parse(tokens: &[String], lexicon: &BTreeMap<String, Upos>) -> ParsedSentence {
    let tokens: Vec<Token> = tokens
        .iter()
        .map(|surface| {
            let pos = lexicon.get(surface).copied().unwrap_or(Upos::X);
            Token::new(surface.clone(), pos, 0, "dep")
        })
        .collect();
    identity_reparse(&tokens)
}

fn assemble_records(
    corpus: &Corpus,
    predictions: &[(String, Vec<String>)],
) -> anyhow::Result<Vec<EvalRecord>> {
    let by_id: BTreeMap<&str, &Vec<String>> =
        predictions.iter().map(|(id, tokens)| (id.as_str(), tokens)).collect();
    for (id, _) in predictions {
        if !corpus.instances.iter().any(|inst| &inst.id == id) {
            bail!("prediction for unknown instance `{id}`");
        }
    }
    corpus
        .instances
        .iter()
        .map(|inst| {
            let candidate = by_id
                .get(inst.id.as_str())
                .ok_or_else(|| anyhow!("no prediction for instance `{}`", inst.id))?;
            Ok(EvalRecord {
                id: inst.id.clone(),
                candidate: (*candidate).clone(),
                reference: inst.reference.surfaces(),
                table: inst.table.clone(),
            })
        })
        .collect()
}

fn report_for(
    ctx: &Ctx,
    records: &[EvalRecord],
    parsed: &[(d2t_core::corpus::EntityTable, ParsedSentence)],
    index: &CooccurrenceIndex,
) -> Result<MetricReport, CliError> {
    let report = score(
        records,
        parsed,
        index,
        &ctx.config.labeler,
        DEFAULT_LAMBDA_MIXING,
        DEFAULT_SMOOTHING,
    )
    .context("scoring")?;
    Ok(report)
}

pub fn evaluate(
    ctx: &mut Ctx,
    predictions_path: &Path,
    corpus_path: &Path,
    index_path: &Path,
    parses_path: Option<&Path>,
) -> Result<(), CliError> {
    ctx.record_input(predictions_path)?;
    let text = std::fs::read_to_string(predictions_path)
        .with_context(|| format!("reading {}", predictions_path.display()))?;
    let predictions = parse_predictions(&text)?;
    let corpus = ctx.load_corpus_input(corpus_path, Split::Test)?;
    let index = load_index(ctx, index_path)?;
    let records = assemble_records(&corpus, &predictions)?;

    let parsed: Vec<(d2t_core::corpus::EntityTable, ParsedSentence)> = match parses_path {
        Some(path) => {
            let parses = ctx.load_corpus_input(path, Split::Test)?;
            records
                .iter()
                .map(|record| {
                    let inst = parses
                        .instances
                        .iter()
                        .find(|inst| inst.id == record.id)
                        .ok_or_else(|| anyhow!("no parse for instance `{}`", record.id))?;
                    if inst.reference.surfaces() != record.candidate {
                        bail!("parse for `{}` does not match the predicted tokens", record.id);
                    }
                    Ok((record.table.clone(), inst.reference.clone()))
                })
                .collect::<anyhow::Result<_>>()?
        }
        None => {
            let lexicon = pos_lexicon(&corpus);
            records
                .iter()
                .map(|r| (r.table.clone(), fallback_parse(&r.candidate, &lexicon)))
                .collect()
        }
    };

    let report = report_for(ctx, &records, &parsed, &index)?;
    eprintln!("evaluated {} predictions", records.len());
    ctx.write_output(report.to_tsv().as_bytes())
}

pub fn sweep(
    ctx: &mut Ctx,
    corpus_path: &Path,
    model_path: &Path,
    index_path: &Path,
    flags: DecodeFlags,
) -> Result<(), CliError> {
    let corpus = ctx.load_corpus_input(corpus_path, Split::Test)?;
    let model = load_checkpoint(ctx, model_path)?;
    let index = load_index(ctx, index_path)?;
    let lexicon = pos_lexicon(&corpus);

    let mut out = String::from(
        "w_content\tw_hallucination\tw_fluency\tbleu\tparent_precision\tparent_recall\tparent_f\thallucination_rate\tmean_length\tflesch\n",
    );
    for raw in SWEEP_GRID {
        let weights = BranchWeights::new(raw).expect("grid weights are valid");
        let predictions = decode_corpus(&model, &corpus, weights, &flags);
        let records = assemble_records(&corpus, &predictions)?;
        let parsed: Vec<_> = records
            .iter()
            .map(|r| (r.table.clone(), fallback_parse(&r.candidate, &lexicon)))
            .collect();
        let m = report_for(ctx, &records, &parsed, &index)?;
        writeln!(
            out,
            "{:.2}\t{:.2}\t{:.2}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}",
            raw[0],
            raw[1],
            raw[2],
            m.bleu,
            m.parent_precision,
            m.parent_recall,
            m.parent_f,
            m.hallucination_rate,
            m.mean_length,
            m.flesch
        )
        .expect("string write");
        eprintln!("swept weights {:.2},{:.2},{:.2}", raw[0], raw[1], raw[2]);
    }
    ctx.write_output(out.as_bytes())
}
