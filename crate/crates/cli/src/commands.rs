use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};

use covexplain::ablate::{enumerate_feature_sets, render_markdown, run_matrix, Learner, MatrixOptions, StandardLearner};
use covexplain::baselines::SvmConfig;
use covexplain::corpus::{
    chronological_split, ingest_records, write_records, CategoricalSchema, Corpus, SchemaMode, StanceLabel,
    OFFLINE_FEATURES,
};
use covexplain::embed::{
    embed_corpus, read_embeddings, write_embeddings, EmbeddingMatrix, Embeddings, FeatureSelection, HashEmbedder,
    OnlineField,
};
use covexplain::explain::{explain_feature_groups, explain_tokens, render_html, write_csv, Attribution};
use covexplain::model::{self, AdamWConfig, TrainConfig};
use covexplain::pipeline::{holdout, BalanceOrder, Hyperparams, Metrics, ModelKind, Predictor, TrainedModel};
use covexplain::rng::derive_seed;
use covexplain::synth::{generate, planted_fusion_spec, SignalSpec};

use crate::{
    AblateArgs, Command, CorpusArgs, DataArgs, EmbedArgs, EvalArgs, ExplainArgs, IngestArgs, ModelOpts, SplitArgs,
    SynthArgs, TrainArgs,
};

/// A bad flag value, reported with exit status 1 like a parse error.
#[derive(Debug)]
pub struct Usage(pub String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn usage(message: impl Into<String>) -> anyhow::Error {
    Usage(message.into()).into()
}

/// Runs one subcommand and returns its one-line summary.
pub fn run(command: Command) -> Result<String> {
    match command {
        Command::Synth(a) => synth(a),
        Command::Ingest(a) => ingest(a),
        Command::Embed(a) => embed(a),
        Command::Split(a) => split(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Ablate(a) => ablate(a),
        Command::Explain(a) => explain(a),
        Command::Report(a) => crate::report::run(a),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("cannot create directory {}", dir.display()))?;
    }
    let file = File::create(path).with_context(|| format!("cannot write {}", path.display()))?;
    Ok(BufWriter::new(file))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut w = create(path)?;
    w.write_all(text.as_bytes())?;
    w.flush()?;
    Ok(())
}

fn load_schema(path: &Path) -> Result<CategoricalSchema> {
    let text = fs::read_to_string(path).with_context(|| format!("cannot read schema {}", path.display()))?;
    CategoricalSchema::from_json(&text).with_context(|| format!("invalid schema {}", path.display()))
}

fn load_corpus(args: &CorpusArgs) -> Result<Corpus> {
    let mode = match &args.schema {
        Some(p) => SchemaMode::Given(load_schema(p)?),
        None => SchemaMode::Infer,
    };
    ingest_records(&args.corpus, mode).with_context(|| format!("loading corpus {}", args.corpus.display()))
}

/// Splits `a,b` into at most two optional paths.
fn path_pair(list: &str, flag: &str) -> Result<(Option<PathBuf>, Option<PathBuf>)> {
    let parts: Vec<&str> = list.split(',').map(str::trim).collect();
    if parts.len() > 2 {
        return Err(usage(format!("--{flag} takes at most two comma-separated paths (tweet,description)")));
    }
    let path = |s: Option<&&str>| s.filter(|s| !s.is_empty()).map(PathBuf::from);
    Ok((path(parts.first()), path(parts.get(1))))
}

struct LoadedEmbeddings {
    tweet: Option<EmbeddingMatrix>,
    description: Option<EmbeddingMatrix>,
}

impl LoadedEmbeddings {
    fn load(list: &str) -> Result<Self> {
        let (t, d) = path_pair(list, "emb")?;
        let read = |p: Option<PathBuf>| -> Result<Option<EmbeddingMatrix>> {
            p.map(|p| read_embeddings(&p).with_context(|| format!("reading embeddings {}", p.display()))).transpose()
        };
        Ok(LoadedEmbeddings { tweet: read(t)?, description: read(d)? })
    }

    fn view(&self) -> Embeddings<'_> {
        Embeddings { tweet: self.tweet.as_ref(), description: self.description.as_ref() }
    }
}

fn balance_order(s: &str) -> Result<BalanceOrder> {
    s.parse().map_err(usage)
}

fn hyperparams(o: &ModelOpts) -> Hyperparams {
    Hyperparams {
        train: TrainConfig {
            learning_rate: o.lr,
            epochs: o.epochs,
            batch_size: o.batch_size,
            hidden_dim: o.hidden,
            dropout_p: o.dropout,
            adamw: AdamWConfig { weight_decay: o.weight_decay, ..AdamWConfig::default() },
            ..TrainConfig::default()
        },
        ridge_lambda: o.ridge_lambda,
        svm: SvmConfig { c: o.svm_c, gamma: o.svm_gamma, ..SvmConfig::default() },
    }
}

fn synth(a: SynthArgs) -> Result<String> {
    let mut spec = match a.preset.as_str() {
        "planted" => planted_fusion_spec(),
        "null" => SignalSpec::null(4000, 0),
        other => return Err(usage(format!("unknown preset {other:?} (expected planted or null)"))),
    };
    spec.n_records = a.n.unwrap_or(spec.n_records);
    spec.seed = a.seed.unwrap_or(spec.seed);
    spec.text_signal_strength = a.text_strength.unwrap_or(spec.text_signal_strength);
    spec.desc_signal_strength = a.desc_strength.unwrap_or(spec.desc_signal_strength);
    spec.offline_signal_strength = a.offline_strength.unwrap_or(spec.offline_signal_strength);
    spec.class_balance = a.class_balance.unwrap_or(spec.class_balance);
    let corpus = generate(&spec)?;
    write_records(&corpus.posts, create(&a.out)?)?;
    if let Some(p) = &a.schema_out {
        write_text(p, &corpus.schema.to_json())?;
    }
    let [anti, pro] = corpus.class_counts();
    Ok(format!("synth: wrote {} records ({anti} anti, {pro} pro) to {}", corpus.len(), a.out.display()))
}

fn ingest(a: IngestArgs) -> Result<String> {
    let corpus = load_corpus(&a.input)?;
    if a.out == a.input.corpus {
        return Err(usage("--out must differ from --corpus"));
    }
    write_records(&corpus.posts, create(&a.out)?)?;
    let schema_out = a.schema_out.unwrap_or_else(|| a.out.with_extension("schema.json"));
    write_text(&schema_out, &corpus.schema.to_json())?;
    let [anti, pro] = corpus.class_counts();
    Ok(format!(
        "ingest: {} records ({anti} anti, {pro} pro) to {}, schema to {}",
        corpus.len(),
        a.out.display(),
        schema_out.display()
    ))
}

fn embed(a: EmbedArgs) -> Result<String> {
    if a.dim < 2 {
        return Err(usage("--dim must be at least 2"));
    }
    let corpus = load_corpus(&a.input)?;
    let (t, d) = path_pair(&a.out, "out")?;
    if t.is_none() && d.is_none() {
        return Err(usage("--out names no output file"));
    }
    let embedder = HashEmbedder::new(a.dim, a.seed);
    let mut written = Vec::new();
    for (field, path) in [(OnlineField::Tweet, t), (OnlineField::Description, d)] {
        if let Some(path) = path {
            let m = embed_corpus(&corpus, field, &embedder)?;
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir)?;
            }
            write_embeddings(&m, &path).with_context(|| format!("writing {}", path.display()))?;
            written.push(path.display().to_string());
        }
    }
    Ok(format!("embed: {} records at dim {} to {}", corpus.len(), a.dim, written.join(", ")))
}

fn split(a: SplitArgs) -> Result<String> {
    let corpus = load_corpus(&a.input)?;
    let slices = chronological_split(&corpus, a.k)?;
    let mut w = create(&a.out)?;
    slices.write_manifest(&corpus, &mut w)?;
    w.flush()?;
    let sizes = slices.sizes();
    Ok(format!(
        "split: {} records into {} slices of {}..{} to {}",
        corpus.len(),
        a.k,
        sizes.iter().min().copied().unwrap_or(0),
        sizes.iter().max().copied().unwrap_or(0),
        a.out.display()
    ))
}

fn train(a: TrainArgs) -> Result<String> {
    let kind: ModelKind = a.model.parse().map_err(|e: covexplain::pipeline::PipelineError| usage(e.to_string()))?;
    let selection = FeatureSelection::parse(&a.features).map_err(|e| usage(e.to_string()))?;
    let order = balance_order(&a.data.balance)?;
    let corpus = load_corpus(&a.data.input)?;
    let emb = LoadedEmbeddings::load(&a.data.emb)?;
    let (train_idx, _) = holdout(&corpus, a.data.k, order, a.seed)?;
    let posts = train_idx.iter().map(|&i| &corpus.posts[i]);
    let (x, layout) = emb.view().assemble_matrix(posts, &corpus.schema, &selection)?;
    let y: Vec<StanceLabel> = train_idx.iter().map(|&i| corpus.posts[i].label).collect();
    let hp = hyperparams(&a.model_opts);
    let fit_seed = derive_seed(a.seed, &[0]);

    let predictor = if kind == ModelKind::CovExplain {
        let config = TrainConfig { seed: fit_seed, ..hp.train.clone() };
        let (params, history) = model::train(x.view(), &y, &config)?;
        if let Some(p) = &a.history {
            let mut w = create(p)?;
            writeln!(w, "epoch,loss,accuracy")?;
            for h in &history {
                writeln!(w, "{},{:.8},{:.6}", h.epoch, h.loss, h.accuracy)?;
            }
            w.flush()?;
        }
        Predictor::Mlp(params)
    } else {
        Predictor::fit(kind, x.view(), &y, &hp, fit_seed)?
    };
    let train_acc = {
        let pred = predictor.predict(x.view(), 0, fit_seed)?;
        covexplain::pipeline::accuracy(&pred, &y)
    };
    let bundle = TrainedModel::new(predictor, corpus.schema.clone(), selection, layout, x.view())?;
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    bundle.save(&a.out).with_context(|| format!("writing {}", a.out.display()))?;
    Ok(format!(
        "train: {kind} on {} balanced records, {} features, train accuracy {:.4}, saved to {}",
        y.len(),
        x.ncols(),
        train_acc,
        a.out.display()
    ))
}

fn load_bundle(path: &Path) -> Result<TrainedModel> {
    TrainedModel::load(path).with_context(|| format!("loading model {}", path.display()))
}

/// The corpus re-validated against the bundle's schema, and its embeddings.
fn bundle_inputs(bundle: &TrainedModel, data: &DataArgs) -> Result<(Corpus, LoadedEmbeddings)> {
    let mut corpus = load_corpus(&data.input)?;
    corpus = Corpus::new(corpus.posts, bundle.schema.clone(), corpus.provenance)
        .context("corpus does not fit the model's schema")?;
    Ok((corpus, LoadedEmbeddings::load(&data.emb)?))
}

fn eval(a: EvalArgs) -> Result<String> {
    let order = balance_order(&a.data.balance)?;
    let bundle = load_bundle(&a.model)?;
    let (corpus, emb) = bundle_inputs(&bundle, &a.data)?;
    let (_, test_idx) = holdout(&corpus, a.data.k, order, a.seed)?;
    let posts = test_idx.iter().map(|&i| &corpus.posts[i]);
    let (x, layout) = emb.view().assemble_matrix(posts, &bundle.schema, &bundle.selection)?;
    if layout != bundle.layout {
        bail!("embeddings give layout {} but the model expects {}", layout.encode(), bundle.layout.encode());
    }
    let truth: Vec<StanceLabel> = test_idx.iter().map(|&i| corpus.posts[i].label).collect();
    let predicted = bundle.predictor.predict(x.view(), a.mc_samples, derive_seed(a.seed, &[1]))?;
    let metrics = Metrics::compute(&predicted, &truth);

    let mut w = create(&a.out)?;
    writeln!(w, "metric,value")?;
    for (name, value) in metrics.entries() {
        writeln!(w, "{name},{value:.6}")?;
    }
    w.flush()?;
    if let Some(p) = &a.predictions {
        let mut w = csv::Writer::from_writer(create(p)?);
        w.write_record(["id", "label", "predicted"])?;
        for (&i, pred) in test_idx.iter().zip(&predicted) {
            let post = &corpus.posts[i];
            w.write_record([post.id.as_str(), post.label.as_str(), pred.as_str()])?;
        }
        w.flush()?;
    }
    Ok(format!(
        "eval: {} on {} held-out records, accuracy {:.4}, macro F1 {:.4}, metrics to {}",
        bundle.predictor.kind(),
        metrics.n,
        metrics.accuracy,
        metrics.macro_f1,
        a.out.display()
    ))
}

fn ablate(a: AblateArgs) -> Result<String> {
    let kinds = ModelKind::parse_list(&a.models).map_err(|e| usage(e.to_string()))?;
    let order = balance_order(&a.data.balance)?;
    if a.replicates == 0 {
        return Err(usage("--replicates must be positive"));
    }
    let corpus = load_corpus(&a.data.input)?;
    let emb = LoadedEmbeddings::load(&a.data.emb)?;

    let schema_features = corpus.schema.feature_names();
    let offline: Vec<&str> = OFFLINE_FEATURES.iter().copied().filter(|f| schema_features.contains(f)).collect();
    let online: Vec<OnlineField> = [(OnlineField::Tweet, emb.tweet.is_some()), (OnlineField::Description, emb.description.is_some())]
        .into_iter()
        .filter_map(|(f, present)| present.then_some(f))
        .collect();
    let mut configs = enumerate_feature_sets(&offline, &online);
    if let Some(list) = &a.features {
        let wanted: Vec<&str> = list.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
        for w in &wanted {
            if !configs.iter().any(|c| c.name == *w) {
                return Err(usage(format!("no grid row named {w:?}")));
            }
        }
        configs.retain(|c| wanted.contains(&c.name.as_str()));
    }
    if online.is_empty() {
        configs.retain(|c| c.selection.online.is_empty());
    }

    let hp = hyperparams(&a.model_opts);
    let learners: Vec<StandardLearner> = kinds.iter().map(|&k| StandardLearner::new(k, hp.clone())).collect();
    let refs: Vec<&dyn Learner> = learners.iter().map(|l| l as &dyn Learner).collect();
    let options = MatrixOptions { k: a.data.k, replicates: a.replicates, base_seed: a.seed, order };
    let report = run_matrix(&corpus, &emb.view(), &configs, &refs, &options)?;

    let mut w = create(&a.out)?;
    report.write_csv(&mut w)?;
    w.flush()?;
    let md_path = a.out.with_extension("md");
    write_text(&md_path, &render_markdown(&report))?;
    let failed = report
        .rows
        .iter()
        .flat_map(|r| &r.cells)
        .filter(|c| matches!(c, covexplain::ablate::Cell::Failed { .. }))
        .count();
    Ok(format!(
        "ablate: {} rows x {} models x {} replicates ({failed} failed cells) to {} and {}",
        report.rows.len(),
        report.models.len(),
        a.replicates,
        a.out.display(),
        md_path.display()
    ))
}

fn explain(a: ExplainArgs) -> Result<String> {
    let bundle = load_bundle(&a.model)?;
    let Predictor::Mlp(params) = &bundle.predictor else {
        bail!("explanations need a covexplain model, {} is a {} model", a.model.display(), bundle.predictor.kind());
    };
    let (corpus, emb) = bundle_inputs(&bundle, &a.data)?;
    let post = corpus
        .posts
        .iter()
        .find(|p| p.id == a.id)
        .with_context(|| format!("record {:?} is not in the corpus", a.id))?;
    let input = emb.view().assemble(post, &bundle.schema, &bundle.selection)?;
    if input.layout != bundle.layout {
        bail!("embeddings give layout {} but the model expects {}", input.layout.encode(), bundle.layout.encode());
    }
    let predicted = {
        let row = ndarray::Array2::from_shape_vec((1, input.values.len()), input.values.clone())?;
        model::predict(params, row.view(), 0, 0)?.remove(0)
    };
    let class = match a.class.as_str() {
        "predicted" => predicted.label,
        other => StanceLabel::parse(other).ok_or_else(|| usage(format!("unknown class {other:?}")))?,
    };

    let attribution: Attribution = match a.unit.as_str() {
        "token" => {
            let seg = bundle
                .layout
                .segment(OnlineField::Tweet.name())
                .context("the model has no tweet input to explain at token level")?;
            let embedder = HashEmbedder::new(seg.len.max(2), a.hash_seed);
            explain_tokens(params, post, &input, &embedder, class, a.permutations, a.seed)?
        }
        "group" => {
            let mut att = explain_feature_groups(params, &post.id, &input, &bundle.feature_mean, class)?;
            att.sort_by_magnitude();
            att
        }
        other => return Err(usage(format!("unknown unit {other:?} (expected token or group)"))),
    };

    let prefix = a.out.to_string_lossy().trim_end_matches(".csv").to_owned();
    let csv_path = PathBuf::from(format!("{prefix}.csv"));
    let html_path = PathBuf::from(format!("{prefix}.html"));
    let json_path = PathBuf::from(format!("{prefix}.json"));
    let mut w = create(&csv_path)?;
    write_csv(&attribution, &mut w)?;
    w.flush()?;
    write_text(&html_path, &render_html(&attribution))?;
    write_text(&json_path, &(serde_json::to_string_pretty(&attribution)? + "\n"))?;

    let top = attribution.values.first().map_or("-".to_owned(), |c| format!("{} ({:+.4})", c.name, c.phi));
    Ok(format!(
        "explain: {} predicted {} (p_pro {:.4}); top {} for {class}: {top}; efficiency gap {:.2e}; wrote {}",
        post.id,
        predicted.label,
        predicted.probs[StanceLabel::Pro.index()],
        a.unit,
        attribution.efficiency_gap(),
        csv_path.display()
    ))
}
