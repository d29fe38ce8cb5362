//! Synthetic underwater scenes, fixture embeddings and the file formats that
//! carry them.

pub mod dataset;
pub mod degrade;
pub mod fixture;
pub mod image_io;
pub mod scene;
pub mod sgef;

pub use dataset::{generate_dataset, load_dataset, DatasetSpec, Sample, SampleRecord, Split};
pub use degrade::{degrade, degrade_at_depth, DegradationParams};
pub use fixture::{gen_fixture_embeddings, FixtureParams};
pub use image_io::{pgm_read, pgm_write, ppm_read, ppm_write};
pub use scene::{gen_scene, Scene, SceneSpec};
pub use sgef::{sgef_read, sgef_write, SgefFile};
