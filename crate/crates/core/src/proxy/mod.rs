//! Recording, storing and replaying page snapshots.

pub mod capture;
pub mod har_import;
pub mod serve;
pub mod store;

pub use capture::{capture, DepthPolicy};
pub use har_import::{import_har, import_har_bytes, ImportError};
pub use serve::{serve, serve_snapshot, ServeMode, ServerHandle, StubPolicy};
pub use store::{Recorded, SnapshotStore, SnapshotWriter, StoreError, StoredSnapshot};
