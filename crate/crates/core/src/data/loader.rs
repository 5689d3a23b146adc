use std::path::{Path, PathBuf};

use super::manifest::{DatasetManifest, ManifestRow, Split};
use super::normalize::{ChannelAccumulator, NormStats};
use super::synth::Synthesizer;
use crate::error::{Error, Result};
use crate::geometry::io::read_signal;
use crate::geometry::{
    build_icosphere, extract_patches, mirror_permutation, Hemisphere, PatchSequence, PatchTable,
    SurfaceSignal,
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Labels {
    pub scan_age: f64,
    pub birth_age: f64,
}

/// One hemisphere ready for the model.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub sequence: PatchSequence,
    pub labels: Labels,
    normalized: bool,
}

impl Example {
    pub fn new(sequence: PatchSequence, labels: Labels, normalized: bool) -> Self {
        Example {
            sequence,
            labels,
            normalized,
        }
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn id(&self) -> String {
        format!("{}_{}", self.sequence.subject, self.sequence.hemisphere.tag())
    }

    /// Z-scores the tokens channel by channel. Refuses to run twice.
    pub fn normalize(&mut self, stats: &NormStats) -> Result<()> {
        if self.normalized {
            return Err(Error::State(format!("example {} is already normalized", self.id())));
        }
        let (v, c) = (self.sequence.vertices_per_patch, self.sequence.channels);
        if stats.channels() != c {
            return Err(Error::Data(format!(
                "statistics cover {} channels, example has {c}",
                stats.channels()
            )));
        }
        for r in 0..self.sequence.tokens.rows() {
            let row = self.sequence.tokens.row_mut(r);
            for ch in 0..c {
                let (m, s) = (stats.mean[ch], stats.std[ch]);
                for x in &mut row[ch * v..(ch + 1) * v] {
                    *x = ((*x as f64 - m) / s) as f32;
                }
            }
        }
        self.normalized = true;
        Ok(())
    }
}

/// Reads manifest rows into examples for one patch table.
pub struct Loader {
    table: PatchTable,
    mirror: Vec<u32>,
    base_dir: PathBuf,
}

impl Loader {
    /// `base_dir` resolves relative manifest paths.
    pub fn new(high_order: u32, patch_order: u32, base_dir: impl AsRef<Path>) -> Result<Self> {
        let mesh = build_icosphere(high_order)?;
        Ok(Loader {
            table: PatchTable::for_mesh(&mesh, patch_order)?,
            mirror: mirror_permutation(&mesh)?,
            base_dir: base_dir.as_ref().to_path_buf(),
        })
    }

    pub fn table(&self) -> &PatchTable {
        &self.table
    }

    pub fn path_of(&self, row: &ManifestRow) -> PathBuf {
        self.base_dir.join(&row.path)
    }

    /// The row's signal in left-hemisphere orientation.
    pub fn load_signal(&self, row: &ManifestRow) -> Result<SurfaceSignal> {
        let signal = read_signal(self.path_of(row))?;
        self.orient(signal, row.hemisphere)
    }

    fn orient(&self, signal: SurfaceSignal, hemisphere: Hemisphere) -> Result<SurfaceSignal> {
        if signal.vertex_count() != self.table.mesh_vertex_count() {
            return Err(Error::Data(format!(
                "signal has {} vertices, the order-{} mesh has {}",
                signal.vertex_count(),
                self.table.high_order(),
                self.table.mesh_vertex_count()
            )));
        }
        match hemisphere {
            Hemisphere::Left => Ok(signal),
            Hemisphere::Right => signal.permuted(&self.mirror),
        }
    }

    /// Mirrors, normalizes and tokenizes an oriented or raw signal.
    pub fn example_from_signal(
        &self,
        signal: SurfaceSignal,
        row: &ManifestRow,
        norm: Option<&NormStats>,
    ) -> Result<Example> {
        let mut signal = self.orient(signal, row.hemisphere)?;
        if let Some(stats) = norm {
            stats.apply(&mut signal)?;
        }
        let tokens = extract_patches(&signal, &self.table)?;
        Ok(Example::new(
            PatchSequence {
                tokens,
                vertices_per_patch: self.table.vertices_per_patch(),
                channels: signal.channels(),
                subject: row.subject.clone(),
                hemisphere: row.hemisphere,
            },
            Labels {
                scan_age: row.scan_age,
                birth_age: row.birth_age,
            },
            norm.is_some(),
        ))
    }

    pub fn load_example(&self, row: &ManifestRow, norm: Option<&NormStats>) -> Result<Example> {
        let signal = read_signal(self.path_of(row))?;
        self.example_from_signal(signal, row, norm)
    }

    /// Channel statistics over the training rows of `manifest`.
    pub fn training_stats(&self, manifest: &DatasetManifest) -> Result<NormStats> {
        let mut acc: Option<ChannelAccumulator> = None;
        for row in manifest.split(Split::Train) {
            let s = self.load_signal(row)?;
            acc.get_or_insert_with(|| ChannelAccumulator::new(s.channels()))
                .add(&s)?;
        }
        acc.ok_or_else(|| Error::Config("manifest has no training rows".into()))?
            .finish()
    }
}

/// Loads one manifest row: mirroring for right hemispheres, optional
/// normalization and patch extraction.
pub fn load_example(
    row: &ManifestRow,
    table: &PatchTable,
    norm: Option<&NormStats>,
    base_dir: impl AsRef<Path>,
) -> Result<Example> {
    Loader::new(table.high_order(), table.patch_order(), base_dir)?.load_example(row, norm)
}

/// Examples of all three splits, normalized with training statistics.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub train: Vec<Example>,
    pub val: Vec<Example>,
    pub test: Vec<Example>,
    pub norm: NormStats,
    pub high_order: u32,
    pub patch_order: u32,
}

impl Dataset {
    pub fn split(&self, split: Split) -> &[Example] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    /// Reads every manifest row from disk. The mesh order is taken from the
    /// first signal file.
    pub fn load(manifest: &DatasetManifest, base_dir: impl AsRef<Path>, patch_order: u32) -> Result<Dataset> {
        let first = manifest
            .rows
            .first()
            .ok_or_else(|| Error::Config("manifest is empty".into()))?;
        let probe = read_signal(base_dir.as_ref().join(&first.path))?;
        let high_order = order_of(probe.vertex_count())?;
        let loader = Loader::new(high_order, patch_order, base_dir)?;
        let norm = loader.training_stats(manifest)?;
        let mut dataset = Dataset {
            train: Vec::new(),
            val: Vec::new(),
            test: Vec::new(),
            norm,
            high_order,
            patch_order,
        };
        for row in &manifest.rows {
            let ex = loader.load_example(row, Some(&dataset.norm))?;
            dataset.push(row.split, ex);
        }
        Ok(dataset)
    }

    /// Generates the same dataset [`super::generate_synthetic`] would write,
    /// without touching the filesystem.
    pub fn synthesize(synth: &Synthesizer, patch_order: u32) -> Result<Dataset> {
        let manifest = synth.manifest();
        let high_order = synth.spec().mesh_order;
        let loader = Loader::new(high_order, patch_order, ".")?;
        let signal_of = |i: usize, row: &ManifestRow| synth.signal(i, row.hemisphere);

        let mut acc = ChannelAccumulator::new(synth.spec().channels);
        for (i, pair) in manifest.rows.chunks(2).enumerate() {
            for row in pair.iter().filter(|r| r.split == Split::Train) {
                acc.add(&loader.orient(signal_of(i, row)?, row.hemisphere)?)?;
            }
        }
        let mut dataset = Dataset {
            train: Vec::new(),
            val: Vec::new(),
            test: Vec::new(),
            norm: acc.finish()?,
            high_order,
            patch_order,
        };
        for (i, pair) in manifest.rows.chunks(2).enumerate() {
            for row in pair {
                let ex = loader.example_from_signal(signal_of(i, row)?, row, Some(&dataset.norm))?;
                dataset.push(row.split, ex);
            }
        }
        Ok(dataset)
    }

    fn push(&mut self, split: Split, ex: Example) {
        match split {
            Split::Train => self.train.push(ex),
            Split::Val => self.val.push(ex),
            Split::Test => self.test.push(ex),
        }
    }
}

/// Icosphere order with `vertices` vertices.
pub fn order_of(vertices: usize) -> Result<u32> {
    (0..=crate::geometry::MAX_ORDER)
        .find(|&k| crate::geometry::vertex_count(k) == vertices)
        .ok_or_else(|| Error::Data(format!("{vertices} vertices is not an icosphere")))
}
