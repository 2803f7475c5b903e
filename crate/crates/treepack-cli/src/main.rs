//! Command-line front end.
//!
//! `treepack pack` embeds a tree family into the inflated clique and writes
//! the certified packing plus a run manifest; `treepack diagnose` runs the
//! quasirandomness and distribution diagnostics standalone.
//!
//! Exit codes: 0 success (packing certified / diagnostics pass), 1 input
//! error (malformed files, conflicting flags, refused instances), 2 a
//! retryable pipeline failure that survived all retries or a failed
//! distribution claim.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use treepack::graph::{
    bad_profile, quasirandom_defect, BadProfile, CountMode, DefectMode, DefectReport, HostGraph,
};
use treepack::limping::{estimate_lemma_bounds, DistributionReport, LimpingConfig};
use treepack::pipeline::{pack_family, FailureReport, PackingResult, PipelineConfig, RunMetrics};
use treepack::tree::cut::{LevelForest, VertexClass};
use treepack::tree::generate::{generate_family, FamilySpec};
use treepack::tree::{read_family, write_family, TreeFamily};

#[derive(Parser)]
#[command(name = "treepack", version, about = "Packs bounded-degree tree families into cliques")]
struct Cli {
    /// Worker threads (falls back to TREEPACK_THREADS, then all cores).
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Pack a tree family into K_{(1+eps)n} and certify the result.
    Pack(PackArgs),
    /// Standalone diagnostics: graph quasirandomness or the sampler's
    /// distributional guarantees.
    Diagnose(DiagnoseArgs),
}

#[derive(Args)]
struct PackArgs {
    /// Tree family as line JSON: a {"n","delta"} header, then one
    /// {"order","parent","root"} object per tree.
    #[arg(long, value_name = "FILE", conflicts_with = "generate")]
    trees: Option<PathBuf>,
    /// Generated family, e.g. "paths:n=60,budget=full", "random:count=40",
    /// "caterpillars:count=12", "regular:depth=3", "ringel:k=14".
    #[arg(long, value_name = "SPEC")]
    generate: Option<String>,
    /// Ground order n of the family (with --trees it must match the
    /// file header; most --generate kinds require it).
    #[arg(long)]
    n: Option<usize>,
    /// Host inflation: the clique packed into has (1+epsilon)n vertices.
    #[arg(long)]
    epsilon: f64,
    /// Degree bound of the family.
    #[arg(long)]
    delta: Option<usize>,
    /// Embedding rounds per group.
    #[arg(long)]
    rounds: Option<usize>,
    /// Order-partition group count (default grows like 50/epsilon).
    #[arg(long)]
    groups: Option<usize>,
    /// Codegree tolerance for the quasirandom extraction.
    #[arg(long)]
    gamma: Option<f64>,
    /// Limping-probability floor parameter, in (0, 1/4).
    #[arg(long)]
    alpha: Option<f64>,
    /// Per-round density slack (default epsilon^2/100).
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Extra attempts after a retryable failure.
    #[arg(long)]
    retries: Option<usize>,
    /// Refuse instances below the threshold order the guarantees need.
    #[arg(long)]
    paper_faithful: bool,
    /// Packing JSON: embedding maps, certificate, metrics.
    #[arg(long, value_name = "FILE", default_value = "packing.json")]
    out: PathBuf,
    /// Standalone metrics JSON (the packing embeds the same data).
    #[arg(long, value_name = "FILE")]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct DiagnoseArgs {
    /// Host graph edge list: an "m=<order>" header, then "u v" lines.
    #[arg(long, value_name = "FILE", conflicts_with = "lemma_suite")]
    graph: Option<PathBuf>,
    /// Codegree tolerance for the bad-set profile.
    #[arg(long)]
    gamma: Option<f64>,
    /// Largest tuple size profiled (the family degree bound).
    #[arg(long)]
    delta: Option<usize>,
    /// Exact enumeration instead of sampling (small graphs only).
    #[arg(long)]
    exact: bool,
    /// Sampled defect: number of random subsets.
    #[arg(long, default_value_t = 2000)]
    subsets: u64,
    /// Sampled bad-set profile: codegree samples per vertex.
    #[arg(long, default_value_t = 128)]
    per_vertex: u64,
    /// Monte Carlo check of the sampler's distributional guarantees on
    /// built-in fixtures (a single edge into K_10, a 10-path into K_100).
    #[arg(long)]
    lemma_suite: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Override the per-fixture trial counts of the lemma suite.
    #[arg(long)]
    trials: Option<u64>,
    /// Output JSON path (stdout when omitted).
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let usage = matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion);
            let _ = e.print();
            return ExitCode::from(if usage { 0 } else { 1 });
        }
    };
    configure_threads(cli.threads);
    let outcome = match cli.command {
        Command::Pack(args) => run_pack(args),
        Command::Diagnose(args) => run_diagnose(args),
    };
    match outcome {
        Ok(code) => code,
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}

/// --threads beats TREEPACK_THREADS; with neither, rayon's default pool
/// (one worker per available core) is left untouched.
fn configure_threads(flag: Option<usize>) {
    let n = flag.or_else(|| {
        std::env::var("TREEPACK_THREADS")
            .ok()
            .and_then(|s| s.trim().parse().ok())
    });
    if let Some(n) = n.filter(|&n| n > 0) {
        // A later call cannot resize an existing global pool; ignore that.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

// ---------------------------------------------------------------------------
// Manifest plumbing. The hash covers the full config echo (input content
// included), so any artifact carrying `manifest_hash` pins the run that
// produced it. Timestamps live in the manifest file and nowhere else:
// everything under --out and --report is byte-identical for equal
// flags and seed.

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn fnv_hex(bytes: &[u8]) -> String {
    format!("{:016x}", fnv1a64(bytes))
}

#[derive(Serialize)]
struct InputEcho {
    /// "file:<path>" or "generate:<spec>".
    source: String,
    /// FNV-1a 64 over the family's canonical line-JSON serialization.
    content_fnv1a64: String,
    trees: usize,
}

#[derive(Serialize)]
struct ConfigEcho {
    command: &'static str,
    n: usize,
    delta: usize,
    input: InputEcho,
    config: PipelineConfig,
}

#[derive(Serialize)]
struct RunManifest<'a> {
    manifest_hash: &'a str,
    created_unix_ms: u128,
    wall_clock_ms: u128,
    outputs: &'a [String],
    echo: &'a ConfigEcho,
}

#[derive(Serialize)]
struct PackingDoc<'a> {
    manifest_hash: &'a str,
    #[serde(flatten)]
    result: &'a PackingResult,
}

#[derive(Serialize)]
struct MetricsDoc<'a> {
    manifest_hash: &'a str,
    #[serde(flatten)]
    metrics: &'a RunMetrics,
}

#[derive(Serialize)]
struct FailureDoc<'a> {
    manifest_hash: &'a str,
    failure: &'a FailureReport,
}

fn unix_ms() -> u128 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis())
        .unwrap_or(0)
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), String> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| format!("cannot serialize {}: {e}", path.display()))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| format!("cannot write {}: {e}", path.display()))
}

/// packing.json -> packing.manifest.json, next to the main artifact.
fn manifest_path(out: &Path) -> PathBuf {
    let stem = out
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("run");
    out.with_file_name(format!("{stem}.manifest.json"))
}

// ---------------------------------------------------------------------------
// pack

fn run_pack(args: PackArgs) -> Result<ExitCode, String> {
    let (fam, source) = load_family(&args)?;
    let mut canonical = Vec::new();
    write_family(&mut canonical, &fam).map_err(|e| e.to_string())?;

    let mut cfg = PipelineConfig::practical(args.epsilon, args.seed);
    if let Some(r) = args.rounds {
        cfg.rounds = r;
    }
    if args.groups.is_some() {
        cfg.groups = args.groups;
    }
    if let Some(g) = args.gamma {
        cfg.gamma = g;
    }
    if let Some(a) = args.alpha {
        cfg.alpha = a;
    }
    if args.beta.is_some() {
        cfg.beta = args.beta;
    }
    if let Some(k) = args.retries {
        cfg.retries = k;
    }
    cfg.paper_faithful = args.paper_faithful;

    let echo = ConfigEcho {
        command: "pack",
        n: fam.n,
        delta: fam.delta,
        input: InputEcho {
            source,
            content_fnv1a64: fnv_hex(&canonical),
            trees: fam.trees.len(),
        },
        config: cfg.clone(),
    };
    let manifest_hash = fnv_hex(&serde_json::to_vec(&echo).map_err(|e| e.to_string())?);

    let started = Instant::now();
    let outcome = pack_family(&fam, &cfg);
    let wall_clock_ms = started.elapsed().as_millis();

    let mut outputs = vec![args.out.display().to_string()];
    let exit = match &outcome {
        Ok(result) => {
            write_json(
                &args.out,
                &PackingDoc {
                    manifest_hash: &manifest_hash,
                    result,
                },
            )?;
            if let Some(report) = &args.report {
                write_json(
                    report,
                    &MetricsDoc {
                        manifest_hash: &manifest_hash,
                        metrics: &result.metrics,
                    },
                )?;
                outputs.push(report.display().to_string());
            }
            eprintln!(
                "certified packing of {} trees into K_{}; wrote {}",
                result.trees.len(),
                result.host_order(),
                args.out.display()
            );
            ExitCode::SUCCESS
        }
        Err(report) => {
            write_json(
                &args.out,
                &FailureDoc {
                    manifest_hash: &manifest_hash,
                    failure: report,
                },
            )?;
            eprintln!("{report}");
            ExitCode::from(if report.retryable { 2 } else { 1 })
        }
    };

    let mpath = manifest_path(&args.out);
    outputs.push(mpath.display().to_string());
    write_json(
        &mpath,
        &RunManifest {
            manifest_hash: &manifest_hash,
            created_unix_ms: unix_ms(),
            wall_clock_ms,
            outputs: &outputs,
            echo: &echo,
        },
    )?;
    Ok(exit)
}

fn load_family(args: &PackArgs) -> Result<(TreeFamily, String), String> {
    let (fam, source) = match (&args.trees, &args.generate) {
        (Some(path), None) => {
            let file =
                File::open(path).map_err(|e| format!("cannot open {}: {e}", path.display()))?;
            let fam = read_family(BufReader::new(file))
                .map_err(|e| format!("{}: {e}", path.display()))?;
            (fam, format!("file:{}", path.display()))
        }
        (None, Some(spec)) => {
            let fspec = parse_spec(spec, args.n, args.delta)?;
            let fam = generate_family(&fspec, args.seed)
                .map_err(|e| format!("--generate {spec:?}: {e}"))?;
            (fam, format!("generate:{spec}"))
        }
        (Some(_), Some(_)) => unreachable!("clap rejects --trees with --generate"),
        (None, None) => return Err("one of --trees FILE or --generate SPEC is required".into()),
    };
    check_family_flags(&fam, args)?;
    Ok((fam, source))
}

fn check_family_flags(fam: &TreeFamily, args: &PackArgs) -> Result<(), String> {
    if let Some(n) = args.n {
        if n != fam.n {
            return Err(format!("--n {n} disagrees with the family's n = {}", fam.n));
        }
    }
    if let Some(delta) = args.delta {
        if delta != fam.delta {
            return Err(format!(
                "--delta {delta} disagrees with the family's delta = {}",
                fam.delta
            ));
        }
    }
    Ok(())
}

/// Grammar: `kind` or `kind:key=value,key=value,...`. Keys `n` and `delta`
/// default to the --n and --delta flags.
fn parse_spec(
    spec: &str,
    n_flag: Option<usize>,
    delta_flag: Option<usize>,
) -> Result<FamilySpec, String> {
    let (kind, rest) = match spec.split_once(':') {
        Some((k, r)) => (k.trim(), r),
        None => (spec.trim(), ""),
    };
    let mut kv: BTreeMap<&str, &str> = BTreeMap::new();
    for part in rest.split(',').filter(|p| !p.trim().is_empty()) {
        let (k, v) = part
            .split_once('=')
            .ok_or_else(|| format!("malformed pair {part:?} in --generate {spec:?}"))?;
        kv.insert(k.trim(), v.trim());
    }

    let parse_usize = |key: &str| -> Result<Option<usize>, String> {
        kv.get(key)
            .map(|v| {
                v.parse::<usize>()
                    .map_err(|_| format!("{key}={v:?} in --generate {spec:?} is not a number"))
            })
            .transpose()
    };
    let require = |key: &str, value: Option<usize>| -> Result<usize, String> {
        value.ok_or_else(|| format!("--generate {spec:?} needs {key}= (or the matching flag)"))
    };

    let n = parse_usize("n")?.or(n_flag);
    let delta = parse_usize("delta")?.or(delta_flag);
    let count = parse_usize("count")?;

    let mut known = vec!["n", "delta", "count"];
    let built = match kind {
        "paths" => {
            known.push("budget");
            let n = require("n", n)?;
            let edge_budget = match kv.get("budget").copied() {
                None | Some("full") => u64::MAX,
                Some(v) => v
                    .parse::<u64>()
                    .map_err(|_| format!("budget={v:?} must be a number or \"full\""))?,
            };
            FamilySpec::Paths { n, edge_budget }
        }
        "random" => FamilySpec::RandomBoundedDegree {
            n: require("n", n)?,
            delta: require("delta", delta)?,
            trees: require("count", count)?,
        },
        "caterpillars" => FamilySpec::Caterpillars {
            n: require("n", n)?,
            delta: require("delta", delta)?,
            trees: require("count", count)?,
        },
        "regular" => {
            known.push("depth");
            FamilySpec::RegularTree {
                delta: require("delta", delta)?,
                depth: require("depth", parse_usize("depth")?)?,
            }
        }
        "ringel" => {
            known.push("k");
            FamilySpec::Ringel {
                k: require("k", parse_usize("k")?)?,
                delta: require("delta", delta)?,
            }
        }
        other => {
            return Err(format!(
                "unknown family kind {other:?}; expected paths, random, caterpillars, regular, or ringel"
            ))
        }
    };
    if let Some(stray) = kv.keys().find(|k| !known.contains(k)) {
        return Err(format!("unknown key {stray:?} in --generate {spec:?}"));
    }
    Ok(built)
}

// ---------------------------------------------------------------------------
// diagnose

#[derive(Serialize)]
struct GraphDiagnosis {
    graph_order: usize,
    graph_edges: u64,
    density: f64,
    defect: DefectReport,
    bad_profile: BadProfile,
}

#[derive(Serialize)]
struct SuiteEntry {
    name: &'static str,
    report: DistributionReport,
}

#[derive(Serialize)]
struct SuiteDoc {
    seed: u64,
    entries: Vec<SuiteEntry>,
    all_pass: bool,
}

fn run_diagnose(args: DiagnoseArgs) -> Result<ExitCode, String> {
    if args.lemma_suite {
        return run_lemma_suite(&args);
    }
    let Some(path) = &args.graph else {
        return Err("one of --graph FILE or --lemma-suite is required".into());
    };
    let gamma = args
        .gamma
        .ok_or("--gamma is required with --graph".to_string())?;
    let delta = args
        .delta
        .ok_or("--delta is required with --graph".to_string())?;

    let text = std::fs::read_to_string(path)
        .map_err(|e| format!("cannot open {}: {e}", path.display()))?;
    let g = HostGraph::from_edge_list(&text).map_err(|e| format!("{}: {e}", path.display()))?;

    let defect_mode = if args.exact {
        DefectMode::Exact
    } else {
        DefectMode::Sampled {
            subsets: args.subsets,
            seed: args.seed,
        }
    };
    let count_mode = if args.exact {
        CountMode::exact()
    } else {
        CountMode::Sampled {
            per_vertex: args.per_vertex,
            seed: args.seed,
        }
    };
    let defect = quasirandom_defect(&g, defect_mode).map_err(|e| e.to_string())?;
    let profile = bad_profile(&g, gamma, delta, count_mode).map_err(|e| e.to_string())?;
    let doc = GraphDiagnosis {
        graph_order: g.order(),
        graph_edges: g.edge_count(),
        density: g.density(),
        defect,
        bad_profile: profile,
    };
    emit(&args.out, &doc)?;
    Ok(ExitCode::SUCCESS)
}

/// Two fixtures: a single Primary–Secondary edge into K_10 (sharp test of
/// the per-vertex and skip guarantees) and a 10-vertex alternating path
/// into K_100 (drives the collision-count bound).
fn run_lemma_suite(args: &DiagnoseArgs) -> Result<ExitCode, String> {
    let single_edge = (
        "single_edge_k10",
        HostGraph::complete(10),
        LevelForest::from_parent_array(vec![0, 1], vec![0, 0]).map_err(|e| e.to_string())?,
        vec![VertexClass::Primary, VertexClass::Secondary],
        args.trials.unwrap_or(100_000),
    );
    let path_parent: Vec<usize> = (0..10usize).map(|v| v.saturating_sub(1)).collect();
    let path_classes: Vec<VertexClass> = (0..10)
        .map(|v| {
            if v % 2 == 0 {
                VertexClass::Primary
            } else {
                VertexClass::Secondary
            }
        })
        .collect();
    let path10 = (
        "path10_k100",
        HostGraph::complete(100),
        LevelForest::from_parent_array((0..10).collect(), path_parent)
            .map_err(|e| e.to_string())?,
        path_classes,
        args.trials.unwrap_or(10_000),
    );

    let mut entries = Vec::new();
    for (name, host, forest, classes, trials) in [single_edge, path10] {
        let cfg = LimpingConfig {
            alpha: 0.2,
            density: 1.0,
            rng_seed: args.seed,
            host: &host,
            forest: &forest,
            classes: &classes,
        };
        let report = estimate_lemma_bounds(&cfg, trials).map_err(|e| format!("{name}: {e}"))?;
        entries.push(SuiteEntry { name, report });
    }
    let all_pass = entries
        .iter()
        .all(|e| e.report.skip.pass && e.report.pairwise.pass && e.report.vc_mean.pass);
    let doc = SuiteDoc {
        seed: args.seed,
        entries,
        all_pass,
    };
    emit(&args.out, &doc)?;
    Ok(if all_pass {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(2)
    })
}

fn emit(out: &Option<PathBuf>, value: &impl Serialize) -> Result<(), String> {
    match out {
        Some(path) => write_json(path, value),
        None => {
            let text = serde_json::to_string_pretty(value).map_err(|e| e.to_string())?;
            println!("{text}");
            Ok(())
        }
    }
}
