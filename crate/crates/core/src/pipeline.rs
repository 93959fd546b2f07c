//! End-to-end runs: a sequence directory in, a hierarchical graph out.

use std::path::Path;

use rayon::prelude::*;
use thiserror::Error;

use crate::config::RunConfig;
use crate::hierarchy::{assemble, ClassCatalog, HierarchicalGraph, HierarchyError};
use crate::ingest::{self, FrameStream, IngestError};
use crate::lane_graph::{extract_lane_graph, LaneGraph};
use crate::object_map::{Association, ObjectMap};
use crate::projection::{observe_frame, ObjectObservation};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Hierarchy(#[from] HierarchyError),
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct BuildStats {
    pub frames: usize,
    pub skipped_frames: usize,
    pub observations: usize,
    pub created: usize,
    pub fused: usize,
    pub warnings: Vec<String>,
}

pub struct BuildOutput {
    pub map: ObjectMap,
    pub lane_graph: Option<LaneGraph>,
    pub graph: HierarchicalGraph,
    pub stats: BuildStats,
}

/// Observations of every frame, in frame order. Frames are processed in
/// parallel.
pub fn observe_stream(stream: &FrameStream, cfg: &RunConfig) -> Vec<Vec<ObjectObservation>> {
    stream.frames.par_iter().map(|f| observe_frame(f, &stream.calibration, &cfg.projection)).collect()
}

/// Fuses observations frame by frame into a fresh object map.
pub fn build_object_map(observations: &[Vec<ObjectObservation>], cfg: &RunConfig, stats: &mut BuildStats) -> ObjectMap {
    let (assoc, merger) = (cfg.association(), cfg.merger());
    let mut map = ObjectMap::new();
    for frame in observations {
        stats.observations += frame.len();
        for a in map.associate_and_integrate(frame, &assoc, &merger) {
            match a {
                Association::Created { .. } => stats.created += 1,
                Association::Fused { .. } => stats.fused += 1,
            }
        }
    }
    map
}

/// Lane graph of the full trajectory. Failure is logged and leaves the
/// lane and segment layers out.
pub fn lane_graph_of(stream: &FrameStream, cfg: &RunConfig, stats: &mut BuildStats) -> Option<LaneGraph> {
    match extract_lane_graph(&stream.trajectory, &cfg.lane) {
        Ok(lg) => Some(lg),
        Err(e) => {
            let w = format!("lane graph not built: {e}");
            log::warn!("{w}");
            stats.warnings.push(w);
            None
        }
    }
}

pub fn build_from_stream(stream: &FrameStream, cfg: &RunConfig) -> Result<BuildOutput, PipelineError> {
    let mut stats = BuildStats {
        frames: stream.frames.len(),
        skipped_frames: stream.skipped_frames,
        warnings: stream.warnings.clone(),
        ..BuildStats::default()
    };
    let observations = observe_stream(stream, cfg);
    let map = build_object_map(&observations, cfg, &mut stats);
    let lane_graph = lane_graph_of(stream, cfg, &mut stats);
    let catalog = ClassCatalog::from_manifest(&stream.manifest).transpose()?;
    let graph = assemble(&map, lane_graph.as_ref(), catalog.as_ref(), &cfg.hierarchy, &cfg.hierarchy.labeler)?;
    log::info!(
        "{} frames, {} observations, {} objects, {} segments",
        stats.frames,
        stats.observations,
        map.len(),
        graph.segments.len()
    );
    Ok(BuildOutput { map, lane_graph, graph, stats })
}

/// Loads a sequence directory and builds every layer.
pub fn build_from_dir(dir: &Path, cfg: &RunConfig) -> Result<BuildOutput, PipelineError> {
    let stream = ingest::load_sequence(dir, &cfg.ingest())?;
    build_from_stream(&stream, cfg)
}

/// Lane graph from the poses of a sequence directory alone.
pub fn lane_from_dir(dir: &Path, cfg: &RunConfig) -> Result<LaneGraph, Box<dyn std::error::Error + Send + Sync>> {
    let poses = ingest::load_poses(&dir.join(ingest::POSES_FILE), cfg.ingest.orthonormal_tol)?;
    Ok(extract_lane_graph(&poses, &cfg.lane)?)
}
