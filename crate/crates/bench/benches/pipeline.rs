use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use ovmap_bench::{random_points, scene_stream};
use ovmap_core::geom::{dbscan_points, voxel_downsample};
use ovmap_core::hierarchy::{assemble, GeometricLabeler, HierarchyConfig};
use ovmap_core::lane_graph::{disfluency_profile, extract_lane_graph, DisfluencyConfig};
use ovmap_core::object_map::{MapObject, ObjectMap};
use ovmap_core::pipeline::build_from_stream;
use ovmap_core::query::retrieve;
use ovmap_core::synthetic::{hash_embedding, poses_along, trajectory_passes, TrajectoryShape};
use ovmap_core::RunConfig;

fn geometry(c: &mut Criterion) {
    let pts = random_points(5_000, 20.0, 1);
    c.bench_function("dbscan_5k", |b| b.iter(|| dbscan_points(&pts, 0.8, 5)));
    c.bench_function("voxel_downsample_5k", |b| b.iter(|| voxel_downsample(&pts, 0.2)));
}

fn lanes(c: &mut Criterion) {
    let passes = trajectory_passes(TrajectoryShape::Cross, 500.0, 1.0);
    let flat = passes.concat();
    let poses = poses_along(&passes, 0.0);
    let cfg = DisfluencyConfig::default();
    c.bench_function("disfluency_profile_2k", |b| b.iter(|| disfluency_profile(&flat, &cfg)));
    c.bench_function("extract_lane_graph_2k", |b| b.iter(|| extract_lane_graph(&poses, &cfg).unwrap()));
}

fn build(c: &mut Criterion) {
    let stream = scene_stream(10, 5);
    let cfg = RunConfig::default();
    let mut group = c.benchmark_group("build");
    group.sample_size(20);
    group.bench_function("cross_10_objects_5_frames", |b| b.iter(|| build_from_stream(&stream, &cfg).unwrap()));
    group.finish();
}

fn queries(c: &mut Criterion) {
    let mut map = ObjectMap::new();
    for i in 0..1_000u64 {
        let pts = random_points(20, 1.0, i).into_iter().map(|p| p + nalgebra::Vector3::new(3.0 * i as f64, 0.0, 0.0)).collect();
        let caption = format!("object number {i}");
        map.insert(MapObject::new(i, pts, caption.clone(), hash_embedding(&caption, 256).unwrap(), 1));
    }
    let h = assemble(&map, None, None, &HierarchyConfig::default(), &GeometricLabeler::default()).unwrap();
    let q = hash_embedding("object number 500", 256).unwrap();
    c.bench_function("retrieve_top3_of_1000", |b| b.iter(|| retrieve(&h, &q, 3).unwrap()));
    c.bench_function("assemble_1000_instances", |b| {
        b.iter_batched(|| map.clone(), |m| assemble(&m, None, None, &HierarchyConfig::default(), &GeometricLabeler::default()).unwrap(), BatchSize::LargeInput)
    });
}

criterion_group!(benches, geometry, lanes, build, queries);
criterion_main!(benches);
