//! Shared fixtures for the criterion benches.

use ovmap_core::geom::Point;
use ovmap_core::ingest::FrameStream;
use ovmap_core::synthetic::{cross_scene_spec, render_scene, EmbeddingMode};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A rendered cross scene as an in-memory frame stream.
pub fn scene_stream(objects: usize, frames: usize) -> FrameStream {
    let scene = render_scene(&cross_scene_spec(objects, frames, EmbeddingMode::Hash, 1)).expect("scene renders");
    FrameStream {
        manifest: scene.manifest,
        calibration: scene.calibration,
        trajectory: scene.poses,
        frames: scene.frames,
        skipped_frames: 0,
        warnings: Vec::new(),
    }
}

/// Uniform points in a `side`-meter cube.
pub fn random_points(n: usize, side: f64, seed: u64) -> Vec<Point> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| Point::new(rng.random::<f64>() * side, rng.random::<f64>() * side, rng.random::<f64>() * side))
        .collect()
}
