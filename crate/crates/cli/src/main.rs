//! `ovmap`: build, query, plan, patch, evaluate and synthesize maps.
//!
//! Exit status is 0 on success, 1 on usage errors and 2 on data errors.
//! Log level comes from `OVMAP_LOG` (default `warn`).

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use ovmap_core::eval::{evaluate_clouds, LabeledCloud};
use ovmap_core::hierarchy::{self, ClassCatalog, HierarchicalGraph, SegmentKind};
use ovmap_core::pipeline::{build_from_dir, lane_from_dir};
use ovmap_core::query::{self, Endpoint, MapPatch, RelationConstraint};
use ovmap_core::synthetic::{self, SceneSpec};
use ovmap_core::RunConfig;
use serde::Deserialize;

#[derive(Parser)]
#[command(name = "ovmap", version, about = "Open-vocabulary object maps, lane graphs and layered scene graphs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct ConfigArgs {
    /// TOML file with run settings.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Override one setting, e.g. `lane.radius=8`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Build a map container from a sequence directory.
    Build {
        data_dir: PathBuf,
        #[arg(short, long, value_name = "MAP")]
        output: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Extract the lane graph of a sequence's poses as JSON.
    Lane {
        data_dir: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Rank instances against a query embedding.
    Retrieve {
        map: PathBuf,
        /// JSON array or whitespace-separated numbers.
        #[arg(long, value_name = "FILE", required_unless_present = "query_text")]
        query_emb: Option<PathBuf>,
        /// Embed this text with the built-in hash embedder instead.
        #[arg(long, conflicts_with = "query_emb")]
        query_text: Option<String>,
        #[arg(short, default_value_t = 3)]
        k: usize,
        /// Also write the candidates with captions and boxes for reranking.
        #[arg(long, value_name = "FILE")]
        export: Option<PathBuf>,
    },
    /// Label the point cloud layer and write a labeled cloud.
    Segment {
        map: PathBuf,
        /// JSON `{"classes": [...], "embeddings": [[...]], "colors": [[r,g,b]]}`;
        /// the map's own catalog when omitted.
        #[arg(long, value_name = "FILE")]
        classes: Option<PathBuf>,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Find road segments by kind and nearby objects.
    Locate {
        map: PathBuf,
        /// intersection, t_intersection, l_intersection or straight.
        #[arg(long)]
        kind: Option<SegmentKind>,
        /// Class name of an object linked "near" the segment. Repeatable.
        #[arg(long, value_name = "CLASS")]
        near: Vec<String>,
        /// Any relation, as `relation:class` (e.g. `on:table`). Repeatable.
        #[arg(long = "rel", value_name = "RELATION:CLASS")]
        relations: Vec<String>,
    },
    /// Shortest lane-graph route between segments (S<id>) or nodes (N<id>).
    Plan {
        map: PathBuf,
        #[arg(long)]
        from: Endpoint,
        #[arg(long)]
        to: Endpoint,
    },
    /// Apply one patch and write the new map.
    Patch {
        map: PathBuf,
        #[arg(long, value_name = "ID", group = "op")]
        remove: Option<u64>,
        /// Patch as JSON: `{"op": "remove" | "replace_caption" | "replace_points", "target": id, ...}`.
        #[arg(long, value_name = "FILE", group = "op")]
        patch: Option<PathBuf>,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Score a predicted labeled cloud against ground truth.
    Eval {
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        pred: PathBuf,
        /// Matching radius between the two clouds, meters.
        #[arg(long, default_value_t = 0.05)]
        radius: f64,
        /// Print JSON instead of a table.
        #[arg(long)]
        json: bool,
    },
    /// Generate a synthetic sequence from a scene description.
    Synth {
        spec: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
    },
}

/// Errors in arguments discovered after parsing; they exit with status 1.
#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    anyhow::Error::new(Usage(msg.into()))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("OVMAP_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.is::<Usage>() => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn load_config(args: &ConfigArgs) -> Result<RunConfig> {
    RunConfig::load(args.config.as_deref(), &args.set).map_err(|e| usage(e.to_string()))
}

fn load_map(path: &Path) -> Result<HierarchicalGraph> {
    hierarchy::load(path).with_context(|| format!("loading {}", path.display()))
}

fn print_json(value: &impl serde::Serialize) {
    println!("{}", serde_json::to_string_pretty(value).expect("serializable"));
}

fn read_vector(path: &Path) -> Result<Vec<f64>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    if let Ok(v) = serde_json::from_str::<Vec<f64>>(&text) {
        return Ok(v);
    }
    text.split(|c: char| c.is_whitespace() || c == ',')
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<f64>().map_err(|_| anyhow!("{}: {t:?} is not a number", path.display())))
        .collect()
}

#[derive(Deserialize)]
struct ClassFile {
    classes: Vec<String>,
    embeddings: Vec<Vec<f64>>,
    colors: Option<Vec<[u8; 3]>>,
}

fn catalog_for(h: &HierarchicalGraph, file: Option<&Path>) -> Result<ClassCatalog> {
    match file {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            let f: ClassFile = serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?;
            Ok(ClassCatalog::new(f.classes, f.embeddings, f.colors)?)
        }
        None => h.catalog.clone().ok_or_else(|| usage("map has no class catalog; pass --classes")),
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Build { data_dir, output, cfg } => {
            let cfg = load_config(&cfg)?;
            let out = build_from_dir(&data_dir, &cfg)?;
            hierarchy::save(&out.graph, &output)?;
            let missing = out.graph.missing_layers();
            print_json(&serde_json::json!({
                "frames": out.stats.frames,
                "skipped_frames": out.stats.skipped_frames,
                "observations": out.stats.observations,
                "objects": out.map.len(),
                "segments": out.graph.segments.len(),
                "missing_layers": missing,
                "warnings": out.stats.warnings,
                "map": output,
            }));
        }
        Command::Lane { data_dir, output, cfg } => {
            let cfg = load_config(&cfg)?;
            let lg = lane_from_dir(&data_dir, &cfg).map_err(|e| anyhow!("{e}"))?;
            fs::write(&output, lg.to_json() + "\n").with_context(|| format!("writing {}", output.display()))?;
            print_json(&serde_json::json!({ "nodes": lg.nodes.len(), "edges": lg.edges.len(), "output": output }));
        }
        Command::Retrieve { map, query_emb, query_text, k, export } => {
            let h = load_map(&map)?;
            let q = match (query_emb, query_text) {
                (Some(p), _) => read_vector(&p)?,
                (None, Some(t)) => synthetic::hash_embedding(&t, h.embedding_dim)?,
                (None, None) => return Err(usage("pass --query-emb or --query-text")),
            };
            let result = query::retrieve(&h, &q, k)?;
            if let Some(path) = export {
                let candidates = query::export_candidates(&h, &q, k)?;
                let text = serde_json::to_string_pretty(&candidates).expect("serializable") + "\n";
                fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
            }
            print_json(&result);
        }
        Command::Segment { map, classes, output } => {
            let h = load_map(&map)?;
            let catalog = catalog_for(&h, classes.as_deref())?;
            let seg = query::semantic_segmentation(&h, &catalog)?;
            seg.cloud.write(&output)?;
            let counts: serde_json::Map<String, serde_json::Value> =
                catalog.names().iter().zip(&seg.class_counts).map(|(n, c)| (n.clone(), (*c).into())).collect();
            print_json(&serde_json::json!({ "points": seg.cloud.len(), "class_counts": counts, "output": output }));
        }
        Command::Locate { map, kind, near, relations } => {
            let h = load_map(&map)?;
            let class_id = |name: &str| {
                h.catalog
                    .as_ref()
                    .and_then(|c| c.index_of(name))
                    .ok_or_else(|| usage(format!("unknown class {name:?}")))
            };
            let mut constraints = Vec::new();
            for name in &near {
                constraints.push(RelationConstraint { relation: "near".into(), class_id: class_id(name)? });
            }
            for r in &relations {
                let (rel, class) = r.rsplit_once(':').ok_or_else(|| usage(format!("expected relation:class, got {r:?}")))?;
                constraints.push(RelationConstraint { relation: rel.into(), class_id: class_id(class)? });
            }
            print_json(&query::locate(&h, kind, &constraints));
        }
        Command::Plan { map, from, to } => {
            let h = load_map(&map)?;
            let p = query::plan_path(&h, from, to)?;
            print_json(&serde_json::json!({ "from": from.to_string(), "to": to.to_string(), "nodes": p.nodes, "length": p.length }));
        }
        Command::Patch { map, remove, patch, output } => {
            let h = load_map(&map)?;
            let patch = match (remove, patch) {
                (Some(target), None) => MapPatch::Remove { target },
                (None, Some(p)) => {
                    let text = fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?;
                    serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?
                }
                _ => return Err(usage("pass exactly one of --remove or --patch")),
            };
            let patched = query::apply_patch(&h, &patch)?;
            let problems = patched.validate();
            if !problems.is_empty() {
                bail!("patched map is inconsistent: {problems:?}");
            }
            hierarchy::save(&patched, &output)?;
            print_json(&serde_json::json!({ "instances": patched.instances.len(), "map": output }));
        }
        Command::Eval { gt, pred, radius, json } => {
            let gt = LabeledCloud::read(&gt)?;
            let pred = LabeledCloud::read(&pred)?;
            let m = evaluate_clouds(&gt, &pred, radius)?;
            if json {
                println!("{}", m.to_json());
            } else {
                print!("{}", m.to_table());
            }
        }
        Command::Synth { spec, output } => {
            let text = fs::read_to_string(&spec).with_context(|| format!("reading {}", spec.display()))?;
            let spec: SceneSpec = serde_json::from_str(&text).with_context(|| format!("parsing {}", spec.display()))?;
            let scene = synthetic::generate_scene(&spec, &output)?;
            print_json(&serde_json::json!({
                "frames": scene.frames.len(),
                "objects": scene.ground_truth.objects.len(),
                "labeled_points": scene.labels.len(),
                "output": output,
            }));
        }
    }
    Ok(())
}
