//! On-disk synthetic dataset.
//!
//! ```text
//! out_dir/
//!   manifest.tsv            header comments, then `id  seed  split  caption`
//!   sample_0000/
//!     clean.ppm  degraded.ppm  mask.pgm  embeddings.sgef
//! ```

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::degrade::{degrade, DegradationParams};
use super::fixture::{gen_fixture_embeddings, FixtureParams};
use super::image_io::{pgm_read, pgm_write, ppm_read, ppm_write};
use super::scene::{gen_scene, SceneSpec};
use super::sgef::{sgef_read, sgef_write};
use crate::diffcore::Tensor;
use crate::error::{Error, Result};
use crate::guidance::{PatchFeatureSet, TextFeature};
use crate::scalar::Scalar;

pub const MANIFEST_NAME: &str = "manifest.tsv";
const MANIFEST_TAG: &str = "# semguide dataset v1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSpec {
    pub seed: u64,
    pub image_size: usize,
    /// Total sample count, train and validation together.
    pub dataset_size: usize,
    /// The last `val_size` samples form the validation split.
    pub val_size: usize,
    pub degradation: DegradationParams,
    pub fixture: FixtureParams,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec {
            seed: 0,
            image_size: 64,
            dataset_size: 240,
            val_size: 40,
            degradation: DegradationParams::default(),
            fixture: FixtureParams::default(),
        }
    }
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.image_size < 16 {
            return Err(Error::Config(format!("image_size must be >= 16, got {}", self.image_size)));
        }
        if self.val_size > self.dataset_size {
            return Err(Error::Config(format!(
                "val_size {} exceeds dataset_size {}",
                self.val_size, self.dataset_size
            )));
        }
        self.degradation.validate()
    }

    fn split_of(&self, index: usize) -> Split {
        if index + self.val_size >= self.dataset_size {
            Split::Val
        } else {
            Split::Train
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SampleRecord {
    pub id: String,
    pub seed: u64,
    pub split: Split,
    pub caption: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample<T> {
    pub record: SampleRecord,
    pub clean: Tensor<T>,
    pub degraded: Tensor<T>,
    pub mask: Tensor<T>,
    pub patches: PatchFeatureSet<T>,
    pub text: TextFeature<T>,
}

fn sample_seeds(seed: u64, count: usize) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| rng.random()).collect()
}

fn caption(objects: &[super::scene::SceneObject]) -> String {
    let labels: Vec<String> = objects.iter().map(|o| format!("a {}", o.label())).collect();
    labels.join(" and ")
}

/// Builds one sample in memory. Everything derives from `sample_seed`.
pub fn gen_sample<T: Scalar>(spec: &DatasetSpec, id: String, sample_seed: u64, split: Split) -> Result<Sample<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(sample_seed);
    let objects = rng.random_range(1..=3);
    let scene_seed: u64 = rng.random();
    let water_seed: u64 = rng.random();
    let embed_seed: u64 = rng.random();
    let s = spec.image_size;
    let scene = gen_scene::<T>(&SceneSpec::new(scene_seed, (s, s), objects)?)?;
    let degraded = degrade(&scene.clean, &spec.degradation, water_seed)?;
    let (patches, text) = gen_fixture_embeddings(&scene.mask, &spec.fixture, embed_seed)?;
    let record = SampleRecord { id, seed: sample_seed, split, caption: caption(&scene.objects) };
    Ok(Sample { record, clean: scene.clean, degraded, mask: scene.mask, patches, text })
}

fn sample_dir(root: &Path, id: &str) -> PathBuf {
    root.join(id)
}

/// Writes the whole dataset and returns its records. Rerunning with the same
/// spec reproduces every file byte for byte.
pub fn generate_dataset(spec: &DatasetSpec, out_dir: impl AsRef<Path>) -> Result<Vec<SampleRecord>> {
    spec.validate()?;
    let root = out_dir.as_ref();
    std::fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    let mut manifest = format!(
        "{MANIFEST_TAG}\n# seed={}\n# image_size={}\n# dataset_size={}\n# val_size={}\n",
        spec.seed, spec.image_size, spec.dataset_size, spec.val_size
    );
    let mut records = Vec::with_capacity(spec.dataset_size);
    for (i, seed) in sample_seeds(spec.seed, spec.dataset_size).into_iter().enumerate() {
        let id = format!("sample_{i:04}");
        let sample = gen_sample::<f32>(spec, id.clone(), seed, spec.split_of(i))?;
        let dir = sample_dir(root, &id);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        ppm_write(dir.join("clean.ppm"), &sample.clean)?;
        ppm_write(dir.join("degraded.ppm"), &sample.degraded)?;
        pgm_write(dir.join("mask.pgm"), &sample.mask)?;
        sgef_write(dir.join("embeddings.sgef"), &sample.patches, &sample.text, Some(&sample.record.caption))?;
        let r = &sample.record;
        writeln!(manifest, "{}\t{}\t{}\t{}", r.id, r.seed, r.split.as_str(), r.caption).expect("string write");
        records.push(sample.record);
    }
    let path = root.join(MANIFEST_NAME);
    std::fs::write(&path, manifest).map_err(|e| Error::io(&path, e))?;
    Ok(records)
}

pub fn read_manifest(dir: impl AsRef<Path>) -> Result<Vec<SampleRecord>> {
    let path = dir.as_ref().join(MANIFEST_NAME);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let mut records = Vec::new();
    let mut offset = 0;
    for line in text.lines() {
        let at = offset;
        offset += line.len() + 1;
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = line.splitn(4, '\t').collect();
        let bad = |msg: &str| Error::format(at, format!("manifest line {line:?}: {msg}"));
        if cols.len() < 3 {
            return Err(bad("expected id, seed, split, caption"));
        }
        let seed = cols[1].parse().map_err(|_| bad("seed is not an integer"))?;
        let split = match cols[2] {
            "train" => Split::Train,
            "val" => Split::Val,
            _ => return Err(bad("split must be train or val")),
        };
        if cols[0].is_empty() || cols[0].contains(['/', '\\']) || cols[0].starts_with('.') {
            return Err(bad("bad sample id"));
        }
        records.push(SampleRecord {
            id: cols[0].to_string(),
            seed,
            split,
            caption: cols.get(3).unwrap_or(&"").to_string(),
        });
    }
    Ok(records)
}

pub fn load_sample<T: Scalar>(dir: impl AsRef<Path>, record: &SampleRecord) -> Result<Sample<T>> {
    let d = sample_dir(dir.as_ref(), &record.id);
    let clean: Tensor<T> = ppm_read(d.join("clean.ppm"))?;
    let degraded: Tensor<T> = ppm_read(d.join("degraded.ppm"))?;
    let mask: Tensor<T> = pgm_read(d.join("mask.pgm"))?;
    let emb = sgef_read(d.join("embeddings.sgef"))?;
    if clean.shape() != degraded.shape() || clean.shape()[1..] != *mask.shape() {
        return Err(Error::shape(format!(
            "{}: clean {:?}, degraded {:?}, mask {:?} disagree",
            record.id,
            clean.shape(),
            degraded.shape(),
            mask.shape()
        )));
    }
    let patches = PatchFeatureSet::new(
        emb.patches.features.cast(),
        (emb.patches.grid_h, emb.patches.grid_w),
        (emb.patches.source_h, emb.patches.source_w),
    )?;
    let text = TextFeature::new(emb.text.vec.cast())?;
    Ok(Sample { record: record.clone(), clean, degraded, mask, patches, text })
}

pub fn load_dataset<T: Scalar>(dir: impl AsRef<Path>) -> Result<Vec<Sample<T>>> {
    let dir = dir.as_ref();
    read_manifest(dir)?.iter().map(|r| load_sample(dir, r)).collect()
}
