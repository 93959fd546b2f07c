//! Object-centric mapping from LiDAR sweeps, poses and open-vocabulary
//! detections, lane graphs from trajectories, and a layered scene graph with
//! retrieval, planning and patching on top.

// `!(x > 0.0)` is used deliberately so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod caption;
pub mod config;
pub mod eval;
pub mod geom;
pub mod hierarchy;
pub mod ingest;
pub mod lane_graph;
pub mod object_map;
pub mod pipeline;
pub mod projection;
pub mod query;
pub mod synthetic;

pub use config::RunConfig;
pub use eval::{LabeledCloud, SegmentationMetrics};
pub use geom::{AxisAlignedBox, Point, Point2};
pub use hierarchy::{ClassCatalog, HierarchicalGraph, MAP_FORMAT};
pub use ingest::{Detection, FrameRecord, FrameStream, Manifest, Pose, SensorCalibration};
pub use lane_graph::{LaneGraph, NodeKind};
pub use object_map::{MapObject, ObjectId, ObjectMap};
pub use query::{Endpoint, MapPatch, RetrievalResult};
