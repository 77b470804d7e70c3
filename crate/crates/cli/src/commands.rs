use std::fmt::Write as _;
use std::fs;
use std::io::{self, Write as _};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use fewmatch::classifier::{score_episode_classifier, DEFAULT_EPOCHS, DEFAULT_LR};
use fewmatch::matchers::{
    row_argmax, similarity_matrix, Aggregation, MatcherKind, MatcherSpec, TupleMode,
};
use fewmatch::projection::{init_projection, DEFAULT_OUTPUT_DIM};
use fewmatch::scorer::{evaluate, evaluate_with};
use fewmatch::store::{
    build_fixed_test_episodes, episode_checksum, write_synthetic, Dataset, Split, SplitCounts,
    SyntheticSpec,
};
use fewmatch::trainer::{train, Checkpoint, TrainConfig, TrainState};
use fewmatch::verify::{run_suite, FaultTarget, VerifyConfig};
use fewmatch::{Episode, ProjectionParams};

use crate::settings::Settings;
use crate::{
    CheckArgs, Cli, Command, DumpArgs, EpisodeArgs, EvalArgs, MatcherArgs, SynthArgs, TrainArgs,
    UsageError, VerificationFailed,
};

/// Seed of the state's episode stream, kept apart from the weight init.
const TRAIN_STREAM_SALT: u64 = 0x7261_696e;

pub fn run(cli: Cli) -> Result<()> {
    let mut settings = Settings::load(cli.config.as_deref())?;
    match cli.command {
        Command::Synth(a) => synth(&mut settings, a),
        Command::Train(a) => train_cmd(&mut settings, a),
        Command::Eval(a) => eval(&mut settings, a),
        Command::Check(a) => check(&mut settings, a),
        Command::DumpCorrespondences(a) => dump(&mut settings, a),
    }
}

fn header(
    settings: &Settings,
    command: &str,
    seeds: &[(&str, u64)],
    checksum: Option<u64>,
) -> String {
    let mut out = format!(
        "# build={} {}\n# config_sha256={}\n",
        env!("CARGO_PKG_NAME"),
        env!("CARGO_PKG_VERSION"),
        settings.config_hash(command)
    );
    for (name, seed) in seeds {
        let _ = writeln!(out, "# {name}={seed}");
    }
    if let Some(c) = checksum {
        let _ = writeln!(out, "# episode_checksum={c:016x}");
    }
    out
}

/// Writes to stdout; a closed pipe (`| head`) is not an error.
fn emit(text: &str) -> Result<()> {
    let mut stdout = io::stdout().lock();
    match stdout
        .write_all(text.as_bytes())
        .and_then(|_| stdout.flush())
    {
        Err(e) if e.kind() != io::ErrorKind::BrokenPipe => Err(e).context("writing to stdout"),
        _ => Ok(()),
    }
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn out_dir(raw: &str) -> Result<PathBuf> {
    let dir = PathBuf::from(raw);
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn parse_split(raw: &str) -> Result<Split> {
    raw.parse::<Split>()
        .map_err(|e| UsageError(e.to_string()).into())
}

fn synth(settings: &mut Settings, a: SynthArgs) -> Result<()> {
    let mut text = String::new();
    let d = SyntheticSpec::default();
    let out: String = settings.required("out", a.out)?;
    let spec = SyntheticSpec {
        classes: SplitCounts {
            train: settings.value("train_classes", a.train_classes, d.classes.train)?,
            val: settings.value("val_classes", a.val_classes, d.classes.val)?,
            test: settings.value("test_classes", a.test_classes, d.classes.test)?,
        },
        segments: settings.value("segments", a.segments, d.segments)?,
        d: settings.value("dim", a.dim, d.d)?,
        noise_sigma: settings.value("noise_sigma", a.noise_sigma, d.noise_sigma)?,
        order_pairs: settings.value("order_pairs", a.order_pairs, d.order_pairs)?,
        videos_per_class: SplitCounts {
            train: settings.value("train_videos", a.train_videos, d.videos_per_class.train)?,
            val: settings.value("val_videos", a.val_videos, d.videos_per_class.val)?,
            test: settings.value("test_videos", a.test_videos, d.videos_per_class.test)?,
        },
        seed: settings.value("seed", a.seed.seed, 0)?,
    };
    let dir = out_dir(&out)?;
    let summary = write_synthetic(&spec, &dir)?;
    let _ = write!(
        text,
        "{}",
        header(settings, "synth", &[("seed", spec.seed)], None)
    );
    let _ = writeln!(
        text,
        "classes\ttrain={}\tval={}\ttest={}",
        summary.classes.train, summary.classes.val, summary.classes.test
    );
    let _ = writeln!(
        text,
        "videos\ttrain={}\tval={}\ttest={}",
        summary.videos.train, summary.videos.val, summary.videos.test
    );
    let _ = writeln!(
        text,
        "reversed_pairs\t{}\tclasses_involved={}",
        summary.reversed_pairs.len(),
        2 * summary.reversed_pairs.len()
    );
    for (a, b) in &summary.reversed_pairs {
        let _ = writeln!(text, "pair\t{a}\t{b}");
    }
    emit(&text)
}

/// Tuple and aggregation settings shared by every method of a run.
struct MatcherOptions {
    tuple_len: Option<usize>,
    tuple_mode: Option<TupleMode>,
    aggregation: Option<Aggregation>,
    dtw_gamma: f64,
}

impl MatcherOptions {
    fn resolve(settings: &mut Settings, a: MatcherArgs) -> Result<Self> {
        let tuple_mode: Option<String> = settings.optional("tuple_mode", a.tuple_mode)?;
        let aggregation: Option<String> = settings.optional("aggregation", a.aggregation)?;
        Ok(Self {
            tuple_len: settings.optional("tuple_len", a.tuple_len)?,
            tuple_mode: tuple_mode.map(|m| m.parse()).transpose()?,
            aggregation: aggregation.map(|m| m.parse()).transpose()?,
            dtw_gamma: settings.value(
                "dtw_gamma",
                a.dtw_gamma,
                fewmatch::matchers::DEFAULT_DTW_GAMMA,
            )?,
        })
    }

    fn spec(&self, method: &str) -> Result<MatcherSpec> {
        let base = if method == "chamfer++" {
            MatcherSpec::chamfer_plus_plus(2)
        } else {
            MatcherSpec::new(method.parse::<MatcherKind>()?)
        };
        let spec = MatcherSpec {
            tuple_len: self.tuple_len.unwrap_or(base.tuple_len),
            tuple_mode: self.tuple_mode.unwrap_or(base.tuple_mode),
            aggregation: self.aggregation.unwrap_or(base.aggregation),
            dtw_gamma: self.dtw_gamma,
            ..base
        };
        spec.validate()?;
        Ok(spec)
    }
}

fn load_dataset(settings: &mut Settings, e: &EpisodeArgs) -> Result<(Dataset, usize, usize)> {
    let data: String = settings.required("data", e.data.clone())?;
    let dataset =
        Dataset::load(Path::new(&data)).with_context(|| format!("loading dataset {data}"))?;
    let (n, d) = dataset.shape().context("dataset is empty")?;
    Ok((dataset, n, d))
}

fn projection_for(checkpoint: Option<&Checkpoint>, input_dim: usize) -> Result<ProjectionParams> {
    match checkpoint {
        None => Ok(ProjectionParams::identity(input_dim)),
        Some(ck) if ck.params.input_dim() == input_dim => Ok(ck.params.clone()),
        Some(ck) => bail!(
            "checkpoint projects {}-dim inputs, but this matcher feeds {input_dim}-dim tuples",
            ck.params.input_dim()
        ),
    }
}

fn train_cmd(settings: &mut Settings, a: TrainArgs) -> Result<()> {
    let mut text = String::new();
    let defaults = TrainConfig::default();
    let out: String = settings.required("out", a.out)?;
    let method: String = settings.value("method", a.method, "chamfer_qs".into())?;
    let options = MatcherOptions::resolve(settings, a.matcher)?;
    let spec = options.spec(&method)?;
    let projection: String = settings.value("projection", a.projection, "learned".into())?;
    let allow_tau_only = settings.switch("allow_tau_only", a.allow_tau_only)?;
    let identity = match projection.as_str() {
        "identity" => true,
        "learned" => false,
        other => {
            return Err(UsageError(format!(
                "unknown projection {other:?}; use learned or identity"
            ))
            .into())
        }
    };
    if identity && spec.kind != MatcherKind::Linear && !allow_tau_only {
        return Err(UsageError(
            "no trainable parameters except temperature; pass --allow-tau-only to train anyway"
                .into(),
        )
        .into());
    }
    let seed = settings.value("seed", a.seed.seed, 0)?;
    let config = TrainConfig {
        lr: settings.value("lr", a.lr, defaults.lr)?,
        tau_init: settings.value("tau_init", a.tau_init, defaults.tau_init)?,
        episodes_per_epoch: settings.value(
            "episodes_per_epoch",
            a.episodes_per_epoch,
            defaults.episodes_per_epoch,
        )?,
        max_epochs: settings.value("epochs", a.epochs, defaults.max_epochs)?,
        patience: settings.value("patience", a.patience, defaults.patience)?,
        seed,
        way: settings.value("way", a.way, defaults.way)?,
        shot: settings.value("shot", a.episode.shot, defaults.shot)?,
        queries_per_class: settings.value(
            "queries",
            a.episode.queries,
            defaults.queries_per_class,
        )?,
        val_episodes: settings.value("val_episodes", a.val_episodes, defaults.val_episodes)?,
        workers: settings.value("workers", a.workers, 0)?,
    };
    let output_dim = settings.value("output_dim", a.output_dim, DEFAULT_OUTPUT_DIM)?;
    let (dataset, n, d) = load_dataset(settings, &a.episode)?;
    if !dataset.has_split(Split::Val) {
        bail!("validation split required");
    }
    let input_dim = d * spec.tuple_len;
    let params = if identity {
        ProjectionParams::identity(input_dim)
    } else {
        init_projection(input_dim, output_dim, seed)?
    };
    let stream_seed = seed ^ TRAIN_STREAM_SALT;
    let init = TrainState::new(params, &spec, config.tau_init, n, stream_seed)?;
    let (best, log) = train(&config, &dataset, &spec, init)?;

    let dir = out_dir(&out)?;
    best.save_checkpoint(&dir.join("checkpoint.fpp"))?;
    let head = header(
        settings,
        "train",
        &[
            ("seed", seed),
            ("init_seed", seed),
            ("episode_stream_seed", stream_seed),
        ],
        None,
    );
    write_file(
        &dir.join("train_log.tsv"),
        &format!("{head}{}", log.to_tsv()),
    )?;
    let _ = write!(text, "{head}");
    let _ = writeln!(
        text,
        "best_epoch={}\tval_accuracy={:.6}\ttau={:.6}\tepochs_run={}",
        best.best_epoch,
        best.best_val_accuracy,
        best.tau(),
        log.epochs.len()
    );
    emit(&text)
}

const SUMMARY_HEADER: &str =
    "method\tway\tshot\tepisodes\tqueries\tmean_accuracy\tci95\tepisode_checksum\n";

fn eval(settings: &mut Settings, a: EvalArgs) -> Result<()> {
    let mut text = String::new();
    let methods: Vec<String> = settings.list("method", a.method, "chamfer_qs")?;
    let ways: Vec<usize> = settings.list("way", a.way, "5")?;
    let options = MatcherOptions::resolve(settings, a.matcher)?;
    let shot = settings.value("shot", a.episode.shot, 1)?;
    let queries = settings.value("queries", a.episode.queries, 1)?;
    let episodes = settings.value("episodes", a.episodes, 1000)?;
    let split = parse_split(&settings.value("split", a.split, "test".to_string())?)?;
    let seed = settings.value("seed", a.seed.seed, 0)?;
    let workers = settings.value("workers", a.workers, 0)?;
    let epochs = settings.value("classifier_epochs", a.classifier_epochs, DEFAULT_EPOCHS)?;
    let clf_lr = settings.value("classifier_lr", a.classifier_lr, DEFAULT_LR)?;
    let checkpoint: Option<String> = settings.optional("checkpoint", a.checkpoint)?;
    let out: Option<String> = settings.optional("out", a.out)?;
    let checkpoint = checkpoint
        .map(|p| Checkpoint::load(Path::new(&p)).with_context(|| format!("loading checkpoint {p}")))
        .transpose()?;
    let specs = methods
        .iter()
        .map(|m| {
            if m == "classifier" {
                Ok(None)
            } else {
                options.spec(m).map(Some)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let (dataset, _, d) = load_dataset(settings, &a.episode)?;
    let dir = out.as_deref().map(out_dir).transpose()?;

    let mut summary = String::from(SUMMARY_HEADER);
    for &way in &ways {
        let list = build_fixed_test_episodes(&dataset, split, way, shot, queries, episodes, seed)?;
        let checksum = episode_checksum(&list);
        let head = header(settings, "eval", &[("seed", seed)], Some(checksum));
        for (method, spec) in methods.iter().zip(&specs) {
            let evaluation = match spec {
                None => evaluate_with(&list, workers, |e| {
                    score_episode_classifier(e, epochs, clf_lr)
                })?,
                Some(spec) => {
                    let params = projection_for(checkpoint.as_ref(), d * spec.tuple_len)?;
                    let spec = checkpoint
                        .as_ref()
                        .map_or_else(|| spec.clone(), |ck| ck.apply_to(spec));
                    evaluate(&list, &spec, &params, workers)?
                }
            };
            let _ = writeln!(
                summary,
                "{method}\t{way}\t{shot}\t{}\t{}\t{:.6}\t{:.6}\t{checksum:016x}",
                list.len(),
                evaluation.total_queries(),
                evaluation.mean_accuracy(),
                evaluation.ci95()
            );
            if let Some(dir) = &dir {
                let path = dir.join(format!("results_{method}_{way}way.tsv"));
                write_file(&path, &format!("{head}{}", evaluation.to_tsv(method)))?;
            }
        }
    }
    let head = header(settings, "eval", &[("seed", seed)], None);
    if let Some(dir) = &dir {
        write_file(&dir.join("summary.tsv"), &format!("{head}{summary}"))?;
    }
    let _ = write!(text, "{head}{summary}");
    emit(&text)
}

fn check(settings: &mut Settings, a: CheckArgs) -> Result<()> {
    let mut text = String::new();
    let seed = settings.value("seed", a.seed.seed, 0)?;
    let cfg = VerifyConfig {
        seed,
        fault: a.fault.then(|| FaultTarget::from_seed(seed)),
        ..VerifyConfig::default()
    };
    let _ = write!(
        text,
        "{}",
        header(settings, "check", &[("seed", seed)], None)
    );
    if let Some(target) = cfg.fault {
        let _ = writeln!(text, "# fault_injected={}", target.name());
    }
    let outcomes = run_suite(&cfg)?;
    let failed: Vec<String> = outcomes
        .iter()
        .filter(|c| !c.passed)
        .map(|c| c.name.clone())
        .collect();
    for c in &outcomes {
        let _ = writeln!(text, "{c}");
    }
    let _ = writeln!(text, "checks={} failed={}", outcomes.len(), failed.len());
    emit(&text)?;
    if failed.is_empty() {
        Ok(())
    } else {
        Err(VerificationFailed(failed).into())
    }
}

fn dump(settings: &mut Settings, a: DumpArgs) -> Result<()> {
    let mut text = String::new();
    let way = settings.value("way", a.way, 5)?;
    let shot = settings.value("shot", a.episode.shot, 1)?;
    let queries = settings.value("queries", a.episode.queries, 1)?;
    let split = parse_split(&settings.value("split", a.split, "test".to_string())?)?;
    let seed = settings.value("seed", a.seed.seed, 0)?;
    let checkpoint: Option<String> = settings.optional("checkpoint", a.checkpoint)?;
    let (dataset, _, d) = load_dataset(settings, &a.episode)?;
    let list = build_fixed_test_episodes(
        &dataset,
        split,
        way,
        shot,
        queries,
        a.episode_index + 1,
        seed,
    )?;
    let episode: &Episode = &list[a.episode_index];
    let query = episode.queries.get(a.query_index).ok_or_else(|| {
        UsageError(format!(
            "query index {} out of range: episode has {} queries",
            a.query_index,
            episode.queries.len()
        ))
    })?;
    let checkpoint = checkpoint
        .map(|p| Checkpoint::load(Path::new(&p)))
        .transpose()?;
    let params = projection_for(checkpoint.as_ref(), d)?;
    let project = |fs: &fewmatch::FeatureSet| -> Result<Vec<Vec<f64>>> {
        fs.clips()
            .map(|c| Ok(params.project(&c.iter().map(|&v| f64::from(v)).collect::<Vec<_>>())?))
            .collect()
    };
    let q = project(&query.features)?;
    let _ = write!(
        text,
        "{}",
        header(
            settings,
            "dump-correspondences",
            &[("seed", seed)],
            Some(episode_checksum(&list))
        )
    );
    let _ = writeln!(
        text,
        "# episode={} query={} video={} true_class={}",
        episode.episode_id,
        a.query_index,
        query.features.video_id(),
        episode.class_labels[query.class]
    );
    let _ = writeln!(text, "query_clip\tsupport_video\tsupport_clip\tsimilarity");
    for shots in &episode.support {
        for video in shots {
            let m = similarity_matrix(&q, &project(video)?)?;
            for (i, (j, s)) in row_argmax(&m).into_iter().enumerate() {
                let _ = writeln!(text, "{i}\t{}\t{j}\t{s:.6}", video.video_id());
            }
        }
    }
    emit(&text)
}
