//! Backend for human correction of generated panorama boxes: batches with a
//! hidden gold image, a three-task adjust/add/verify protocol driven by an
//! append-only event log, gold-standard scoring and a JSON HTTP API.

pub mod api;
pub mod protocol;
pub mod service;
pub mod session;
pub mod store;

pub use api::{router, serve};
pub use protocol::{
    box_from_extremes, link_boxes, unlink_boxes, EditEvent, EditKind, Instruction, Point, TaskStage, WorkBox,
};
pub use service::{
    crowdsourcing_report, BatchView, CrowdsourcingReport, Decision, FinalizeView, ImageRecord, ImageView, Outcome,
    Service, ServiceError,
};
pub use session::{timing_report, Session, TimingReport};
pub use store::Store;
