//! `liquidrec`: batch driver for the recommendation engine.

mod format;
mod sweep;

use std::fs;
use std::io::{self, BufRead, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand};

use liquidrec_core::model::{Category, CategorySet, SongKey, UserId};
use liquidrec_core::pipeline::{recompute, score_category, RecomputeParams};
use liquidrec_core::recommend::{
    combined_score, personal_weights, personalized_iterator, user_insights, Delta,
};
use liquidrec_core::store::{
    epoch_file_name, latest_epoch, load_friendship, new_event_json_line, now_ms, parse_event_line,
    write_friendship, Store, StoreConfig, StoreError,
};
use liquidrec_core::synth::{generate, GenParams, Model};
use liquidrec_core::viscous::{Alpha, Engine};
use liquidrec_service::ServiceConfig;

use format::{row, sig6};

#[derive(Parser)]
#[command(
    name = "liquidrec",
    version,
    about = "Delegation-weighted music recommendations"
)]
struct Cli {
    /// Data directory holding events.jsonl, friendship.txt, catalog.tsv and epochs/.
    #[arg(long, global = true, default_value = "data")]
    data: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate and load an event file plus the friendship graph.
    Import {
        #[arg(long)]
        events: PathBuf,
        #[arg(long)]
        friends: PathBuf,
        #[arg(long)]
        catalog: Option<PathBuf>,
    },
    /// Score every category and write a new epoch.
    Recompute {
        #[arg(long, default_value_t = 0.75)]
        alpha: f64,
        #[arg(long, default_value_t = Engine::Exact)]
        engine: Engine,
    },
    /// Print the global or personalized ranking of a category.
    Rank {
        #[arg(long, default_value = "jazz")]
        category: String,
        #[arg(long)]
        top: Option<usize>,
        /// Personalize for this user.
        #[arg(long)]
        user: Option<String>,
        #[arg(long, default_value_t = 0.9, requires = "user")]
        delta: f64,
    },
    /// Print a user's score and percentile in each category.
    Insights {
        #[arg(long)]
        user: String,
    },
    /// Write a synthetic events.jsonl and friendship.txt into the data directory.
    Gen {
        #[arg(long)]
        users: usize,
        #[arg(long, default_value = "chain")]
        model: Model,
        #[arg(long, default_value_t = 2)]
        votes_per_user: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "jazz")]
        category: String,
    },
    /// Rank one category at several alphas and compare the rankings.
    Sweep {
        #[arg(
            long,
            value_delimiter = ',',
            default_value = "0.1,0.25,0.5,0.75,0.9,1.0"
        )]
        alphas: Vec<f64>,
        #[arg(long, default_value = "jazz")]
        category: String,
        /// Rows per alpha in the rank tables (correlations use every song).
        #[arg(long, default_value_t = 10)]
        top: usize,
    },
    /// Run the HTTP service.
    Serve {
        /// key = value config file; defaults follow the data directory.
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let stdout = io::stdout();
    let mut out = BufWriter::new(stdout.lock());
    let data = cli.data.as_path();
    match cli.command {
        Command::Import {
            events,
            friends,
            catalog,
        } => import(data, &events, &friends, catalog.as_deref(), &mut out)?,
        Command::Recompute { alpha, engine } => recompute_cmd(data, alpha, engine, &mut out)?,
        Command::Rank {
            category,
            top,
            user,
            delta,
        } => rank(data, &category, top, user.as_deref(), delta, &mut out)?,
        Command::Insights { user } => insights(data, &user, &mut out)?,
        Command::Gen {
            users,
            model,
            votes_per_user,
            seed,
            category,
        } => gen(
            data,
            users,
            model,
            votes_per_user,
            seed,
            &category,
            &mut out,
        )?,
        Command::Sweep {
            alphas,
            category,
            top,
        } => sweep_cmd(data, &alphas, &category, top, &mut out)?,
        Command::Serve { config } => {
            drop(out);
            return serve(data, config.as_deref());
        }
    }
    out.flush()?;
    Ok(())
}

fn category(name: &str) -> Result<Category> {
    CategorySet::default()
        .parse(name)
        .map_err(|e| anyhow!("{e}"))
}

fn open_store(data: &Path) -> Result<Store> {
    Store::open(StoreConfig::in_dir(data))
        .with_context(|| format!("cannot open the event log in {}", data.display()))
}

fn import(
    data: &Path,
    events: &Path,
    friends: &Path,
    catalog: Option<&Path>,
    out: &mut impl Write,
) -> Result<()> {
    // Check the inputs before touching the data directory.
    let graph = load_friendship(friends).with_context(|| format!("{}", friends.display()))?;
    let file = fs::File::open(events).with_context(|| format!("{}", events.display()))?;
    let mut parsed = Vec::new();
    for (i, line) in io::BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let p = parse_event_line(&line)
            .map_err(|reason| anyhow!("{}: line {}: {reason}", events.display(), i + 1))?;
        parsed.push((i + 1, p.event));
    }

    // Validate against the given friendship and catalog files; they replace
    // the data directory's copies only once every event is accepted.
    let mut config = StoreConfig::in_dir(data);
    config.friendship_path = Some(friends.to_path_buf());
    config.catalog_path = catalog.map(Path::to_path_buf);
    let mut store = Store::open(config)
        .with_context(|| format!("cannot open the event log in {}", data.display()))?;
    let count = parsed.len();
    store.import(parsed).map_err(|e| match e {
        StoreError::ImportFailed { line, source } => {
            anyhow!(
                "{}: line {line}: {source} ({})",
                events.display(),
                source.code()
            )
        }
        other => other.into(),
    })?;
    let mut text = Vec::new();
    write_friendship(&mut text, graph.edges())?;
    fs::write(data.join("friendship.txt"), text)?;
    if let Some(c) = catalog {
        fs::copy(c, data.join("catalog.tsv"))?;
    }
    writeln!(
        out,
        "imported {count} events and {} friendships",
        graph.edge_count()
    )?;
    Ok(())
}

fn recompute_cmd(data: &Path, alpha: f64, engine: Engine, out: &mut impl Write) -> Result<()> {
    let alpha = Alpha::new(alpha)?;
    let store = open_store(data)?;
    let epochs_dir = data.join("epochs");
    let previous = latest_epoch(&epochs_dir)?;
    let next_id = previous.as_ref().map_or(1, |e| e.epoch_id + 1);
    let params = RecomputeParams::new(alpha, engine);
    let result = recompute(
        store.shared_state(),
        &CategorySet::default(),
        &params,
        next_id,
        now_ms(),
        store.last_seq(),
        previous.as_ref(),
    );
    if let Some((category, error)) = result.failures.first() {
        bail!("category {category}: {error} ({})", score_error_code(error));
    }
    let path = epochs_dir.join(epoch_file_name(next_id));
    result.epoch.write_json(&path)?;
    writeln!(out, "{}", row(["category", "users", "songs"]))?;
    for (c, t) in result.epoch.categories() {
        writeln!(
            out,
            "{}",
            row([
                c.to_string(),
                t.users.len().to_string(),
                t.songs.len().to_string()
            ])
        )?;
    }
    Ok(())
}

fn score_error_code(e: &liquidrec_core::viscous::ScoreError) -> &'static str {
    use liquidrec_core::viscous::ScoreError::*;
    match e {
        InvalidAlpha(_) => "InvalidAlpha",
        CycleAtAlphaOne => "CycleAtAlphaOne",
        KatzAlphaOne => "KatzAlphaOne",
        CycleDetected => "CycleDetected",
        NoConvergence { .. } => "NoConvergence",
    }
}

fn rank(
    data: &Path,
    category_name: &str,
    top: Option<usize>,
    user: Option<&str>,
    delta: f64,
    out: &mut impl Write,
) -> Result<()> {
    let c = category(category_name)?;
    let top = top.unwrap_or(usize::MAX);
    if top == 0 {
        return Ok(());
    }
    let epoch = latest_epoch(&data.join("epochs"))?
        .ok_or_else(|| anyhow!("no epoch in {}; run `recompute` first", data.display()))?;
    let tables = epoch
        .category(&c)
        .ok_or_else(|| anyhow!("category {c} is missing from epoch {}", epoch.epoch_id))?;
    let songs = &tables.songs;
    match user {
        None => {
            writeln!(out, "{}", row(["rank", "r", "artist", "title", "media"]))?;
            for (i, e) in songs.entries().iter().take(top).enumerate() {
                writeln!(out, "{}", song_row(i + 1, e.r, &e.song, &e.media_ref))?;
            }
        }
        Some(u) => {
            let u = UserId::new(u)?;
            let delta = Delta::new(delta)?;
            // Personal weights come from the graphs the epoch was computed from.
            let store = open_store(data)?;
            if store.last_seq() != epoch.through_seq {
                bail!(
                    "the event log has moved past epoch {} (seq {} vs {}); run `recompute` first",
                    epoch.epoch_id,
                    store.last_seq(),
                    epoch.through_seq
                );
            }
            let empty = liquidrec_core::store::CategoryGraphs::new(c.clone());
            let graphs = store.state().graphs(&c).unwrap_or(&empty);
            let weights = personal_weights(&u, &graphs.delegations, &graphs.votes, epoch.alpha);
            writeln!(out, "{}", row(["rank", "c", "artist", "title", "media"]))?;
            for (i, item) in personalized_iterator(&weights, songs, delta)
                .take(top)
                .enumerate()
            {
                let media = songs
                    .get(&item.song)
                    .map(|e| e.media_ref.as_str())
                    .or_else(|| weights.media(&item.song))
                    .unwrap_or_default();
                let c = combined_score(&item.song, &weights, songs, delta);
                writeln!(out, "{}", song_row(i + 1, c, &item.song, media))?;
            }
        }
    }
    Ok(())
}

fn song_row(rank: usize, score: f64, song: &SongKey, media: &str) -> String {
    row([
        rank.to_string(),
        sig6(score),
        song.artist().to_string(),
        song.title().to_string(),
        media.to_string(),
    ])
}

fn insights(data: &Path, user: &str, out: &mut impl Write) -> Result<()> {
    let u = UserId::new(user)?;
    let epoch = latest_epoch(&data.join("epochs"))?
        .ok_or_else(|| anyhow!("no epoch in {}; run `recompute` first", data.display()))?;
    writeln!(out, "{}", row(["category", "score", "percentile"]))?;
    for i in user_insights(&u, epoch.categories().map(|(_, t)| &t.users)) {
        writeln!(
            out,
            "{}",
            row([i.category.to_string(), sig6(i.score), sig6(i.percentile)])
        )?;
    }
    Ok(())
}

fn gen(
    data: &Path,
    users: usize,
    model: Model,
    votes_per_user: usize,
    seed: u64,
    category_name: &str,
    out: &mut impl Write,
) -> Result<()> {
    let events_path = data.join("events.jsonl");
    if events_path.exists() {
        bail!(
            "{} already exists; generate into an empty directory",
            events_path.display()
        );
    }
    let params = GenParams {
        users,
        model,
        votes_per_user,
        seed,
        category: category(category_name)?,
    };
    let synthetic = generate(&params)?;
    fs::create_dir_all(data)?;

    let mut f = BufWriter::new(fs::File::create(&events_path)?);
    for (i, e) in synthetic.events.iter().enumerate() {
        writeln!(f, "{}", new_event_json_line(Some(i as u64 + 1), e))?;
    }
    f.flush()?;
    let mut f = BufWriter::new(fs::File::create(data.join("friendship.txt"))?);
    write_friendship(&mut f, synthetic.friendships.iter().map(|(a, b)| (a, b)))?;
    f.flush()?;
    writeln!(
        out,
        "wrote {} events and {} friendships to {}",
        synthetic.events.len(),
        synthetic.friendships.len(),
        data.display()
    )?;
    Ok(())
}

fn sweep_cmd(
    data: &Path,
    alphas: &[f64],
    category_name: &str,
    top: usize,
    out: &mut impl Write,
) -> Result<()> {
    let c = category(category_name)?;
    let store = open_store(data)?;
    let empty = liquidrec_core::store::CategoryGraphs::new(c.clone());
    let graphs = store.state().graphs(&c).unwrap_or(&empty);

    let mut tables = Vec::new();
    for &a in alphas {
        let alpha = Alpha::new(a)?;
        let scored = score_category(graphs, &c, &RecomputeParams::new(alpha, Engine::Exact))
            .map_err(|e| anyhow!("alpha {a}: {e} ({})", score_error_code(&e)))?;
        tables.push((a, scored.songs));
    }

    writeln!(
        out,
        "{}",
        row(["alpha", "rank", "r", "artist", "title", "media"])
    )?;
    for (a, songs) in &tables {
        for (i, e) in songs.entries().iter().take(top).enumerate() {
            writeln!(
                out,
                "{}\t{}",
                sig6(*a),
                song_row(i + 1, e.r, &e.song, &e.media_ref)
            )?;
        }
    }

    // Every alpha scores the same song set; pair the r values by song.
    let keys: Vec<&SongKey> = tables
        .first()
        .map(|(_, t)| t.entries().iter().map(|e| &e.song).collect())
        .unwrap_or_default();
    let columns: Vec<Vec<f64>> = tables
        .iter()
        .map(|(_, t)| keys.iter().map(|k| t.r(k)).collect())
        .collect();
    writeln!(out)?;
    writeln!(out, "{}", row(["alpha_a", "alpha_b", "kendall_tau"]))?;
    for i in 0..tables.len() {
        for j in i + 1..tables.len() {
            let tau = sweep::kendall_tau_b(&columns[i], &columns[j]);
            let tau = if tau.is_nan() {
                "nan".to_string()
            } else {
                sig6(tau)
            };
            writeln!(out, "{}", row([sig6(tables[i].0), sig6(tables[j].0), tau]))?;
        }
    }
    Ok(())
}

fn serve(data: &Path, config: Option<&Path>) -> Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("info")),
        )
        .init();
    let config = match config {
        Some(path) => ServiceConfig::load(path)?,
        None => {
            let mut c = ServiceConfig::for_data_dir(data);
            c.apply_env(std::env::vars())?;
            c
        }
    };
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(liquidrec_service::run(config))
}
