//! Survey point cloud pipeline: ingest, out-of-core octree indexing,
//! measurements and drawings, plane segmentation, and collaborative
//! annotation layers over immutable base data.

pub mod collab;
pub mod ingest;
pub mod measure;
pub mod octree;
pub mod point;
pub mod segment;

pub use collab::{
    Action, Actor, CollabError, Event, Message, OpId, Payload, ProjectConfig, Role, SessionOp,
    SessionState,
};
pub use ingest::{open_source, IngestError, PointStream, Source, SourceFormat, SourceSummary};
pub use measure::{
    evaluate, export_layer, extract_profile, import_layer, snap, BoxExtent, LayerDocument,
    LayerFormat, MeasureError, Measurement, MeasurementSeries, SeriesKind, Vertex3,
};
pub use octree::{
    build_index, decimate, read_node, stream_node, BuildConfig, IndexError, IndexManifest,
    NodeCode, NodeSource, OctreeNode, TileSet,
};
pub use point::{Aabb, PointRecord};
pub use segment::{
    anchor_to_plane, segment_planes, Plane, SegmentConfig, SegmentError, SegmentationResult,
};
