//! Deterministic synthetic cortical-like signals.
//!
//! Each channel is a sum of von Mises-Fisher bumps on the sphere. Some bump
//! amplitudes grow with an "apparent" age (scan age plus a per-subject
//! jitter), one tracks prematurity, and the rest vary freely between
//! subjects. Gaussian noise is added per vertex.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::manifest::{assign_splits, DatasetManifest, ManifestRow};
use crate::error::{Error, Result};
use crate::geometry::icosphere::{dot, normalize};
use crate::geometry::io::{write_mesh, write_signal};
use crate::geometry::{build_icosphere, Hemisphere, Icosphere, SurfaceSignal, Vec3, MAX_ORDER};

/// How bump amplitudes depend on the subject.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AmplitudeModel {
    /// Every amplitude equals the scan age.
    Identity,
    /// Age-driven, prematurity-driven and free (nuisance) bumps. The age
    /// bumps see the scan age blurred by Gaussian jitter of `age_jitter`
    /// weeks.
    Developmental { age_jitter: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub subjects: usize,
    pub age_min: f64,
    pub age_max: f64,
    pub channels: usize,
    pub bases_per_channel: usize,
    pub noise_std: f64,
    pub seed: u64,
    pub preterm_fraction: f64,
    pub mesh_order: u32,
    pub amplitude: AmplitudeModel,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            subjects: 100,
            age_min: 24.0,
            age_max: 45.0,
            channels: 4,
            bases_per_channel: 6,
            noise_std: 0.1,
            seed: 0,
            preterm_fraction: 0.3,
            mesh_order: 6,
            amplitude: AmplitudeModel::Developmental { age_jitter: 1.0 },
        }
    }
}

/// Keys accepted by [`SyntheticSpec::parse`], with descriptions.
pub const SPEC_KEYS: &[(&str, &str)] = &[
    ("subjects", "number of subjects; each yields a left and a right hemisphere (100)"),
    ("age_min", "lowest scan age in weeks (24)"),
    ("age_max", "highest scan age in weeks (45)"),
    ("channels", "signal channels (4)"),
    ("bases_per_channel", "bumps per channel (6)"),
    ("noise_std", "per-vertex Gaussian noise (0.1)"),
    ("seed", "generator seed (0)"),
    ("preterm_fraction", "fraction of subjects born before their scan (0.3)"),
    ("mesh_order", "icosphere order of the signals (6)"),
    ("amplitude", "identity | developmental (developmental)"),
    ("age_jitter", "std of the apparent-age blur in weeks, developmental only (1.0)"),
];

/// Preterm subjects are born this many weeks before their scan.
pub const PRETERM_OFFSET: (f64, f64) = (4.0, 12.0);

const CHANNEL_NAMES: [&str; 4] = ["myelin", "curvature", "sulc", "thickness"];

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.subjects == 0 {
            return fail("subjects must be positive".into());
        }
        if !(self.age_min < self.age_max) || !self.age_min.is_finite() || !self.age_max.is_finite() {
            return fail(format!("age range [{}, {}] is empty", self.age_min, self.age_max));
        }
        if self.channels == 0 || self.bases_per_channel == 0 {
            return fail("channels and bases_per_channel must be positive".into());
        }
        if !(self.noise_std >= 0.0) {
            return fail(format!("noise_std {} is negative", self.noise_std));
        }
        if !(0.0..=1.0).contains(&self.preterm_fraction) {
            return fail(format!("preterm_fraction {} not in [0, 1]", self.preterm_fraction));
        }
        if self.mesh_order > MAX_ORDER {
            return fail(format!("mesh_order {} above {MAX_ORDER}", self.mesh_order));
        }
        if let AmplitudeModel::Developmental { age_jitter } = self.amplitude {
            if !(age_jitter >= 0.0) {
                return fail(format!("age_jitter {age_jitter} is negative"));
            }
        }
        Ok(())
    }

    /// Parses flat `key=value` lines (`#` starts a comment) over the
    /// defaults.
    pub fn parse(text: &str) -> Result<SyntheticSpec> {
        let mut spec = SyntheticSpec::default();
        let mut jitter = 1.0;
        let mut identity = false;
        for (key, value) in crate::training::parse_pairs(text)? {
            let num = |v: &str| {
                v.parse::<f64>()
                    .map_err(|_| Error::Config(format!("`{key}` expects a number, got {v:?}")))
            };
            let int = |v: &str| {
                v.parse::<u64>()
                    .map_err(|_| Error::Config(format!("`{key}` expects an integer, got {v:?}")))
            };
            match key.as_str() {
                "subjects" => spec.subjects = int(&value)? as usize,
                "age_min" => spec.age_min = num(&value)?,
                "age_max" => spec.age_max = num(&value)?,
                "channels" => spec.channels = int(&value)? as usize,
                "bases_per_channel" => spec.bases_per_channel = int(&value)? as usize,
                "noise_std" => spec.noise_std = num(&value)?,
                "seed" => spec.seed = int(&value)?,
                "preterm_fraction" => spec.preterm_fraction = num(&value)?,
                "mesh_order" => spec.mesh_order = int(&value)? as u32,
                "amplitude" => {
                    identity = match value.as_str() {
                        "identity" => true,
                        "developmental" => false,
                        other => {
                            return Err(Error::Config(format!("unknown amplitude model {other:?}")))
                        }
                    }
                }
                "age_jitter" => jitter = num(&value)?,
                other => return Err(Error::Config(format!("unknown synth key `{other}`"))),
            }
        }
        spec.amplitude = if identity {
            AmplitudeModel::Identity
        } else {
            AmplitudeModel::Developmental { age_jitter: jitter }
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_text(&self) -> String {
        let (model, jitter) = match self.amplitude {
            AmplitudeModel::Identity => ("identity", 0.0),
            AmplitudeModel::Developmental { age_jitter } => ("developmental", age_jitter),
        };
        format!(
            "subjects={}\nage_min={}\nage_max={}\nchannels={}\nbases_per_channel={}\nnoise_std={}\n\
             seed={}\npreterm_fraction={}\nmesh_order={}\namplitude={model}\nage_jitter={jitter}\n",
            self.subjects,
            self.age_min,
            self.age_max,
            self.channels,
            self.bases_per_channel,
            self.noise_std,
            self.seed,
            self.preterm_fraction,
            self.mesh_order,
        )
    }

    pub fn channel_names(&self) -> Vec<String> {
        if self.channels == CHANNEL_NAMES.len() {
            CHANNEL_NAMES.iter().map(|s| s.to_string()).collect()
        } else {
            (0..self.channels).map(|c| format!("channel{c}")).collect()
        }
    }

    pub fn subject_id(&self, index: usize) -> String {
        let width = self.subjects.to_string().len().max(4);
        format!("sub-{index:0width$}")
    }
}

/// What a bump's amplitude follows.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Role {
    Age { base: f64, slope: f64 },
    Preterm { slope: f64 },
    Nuisance,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubjectRecord {
    pub index: usize,
    pub id: String,
    pub scan_age: f64,
    pub birth_age: f64,
    pub preterm: bool,
    /// Scan age as seen by the age-driven bumps.
    pub apparent_age: f64,
}

/// SplitMix64 finalizer, used to derive independent seeds.
pub(crate) fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub(crate) fn derive_seed(parts: &[u64]) -> u64 {
    parts.iter().fold(0x5eed, |acc, &p| mix(acc ^ mix(p)))
}

/// Lazily produces subjects and their signals from a spec.
pub struct Synthesizer {
    spec: SyntheticSpec,
    mesh: Icosphere,
    roles: Vec<Role>,
    /// `[basis][vertex]` bump values for the left and the mirrored right
    /// hemisphere.
    basis_left: Vec<Vec<f64>>,
    basis_right: Vec<Vec<f64>>,
}

fn random_unit<R: Rng>(rng: &mut R) -> Vec3 {
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    loop {
        let v = [normal.sample(rng), normal.sample(rng), normal.sample(rng)];
        if dot(&v, &v) > 1e-12 {
            return normalize(v);
        }
    }
}

impl Synthesizer {
    pub fn new(spec: SyntheticSpec) -> Result<Self> {
        spec.validate()?;
        let mesh = build_icosphere(spec.mesh_order)?;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[spec.seed, 0]));
        let k = spec.bases_per_channel;
        let n_age = k.div_ceil(2);
        let mut roles = Vec::new();
        let mut basis_left = Vec::new();
        let mut basis_right = Vec::new();
        for _ in 0..spec.channels {
            for b in 0..k {
                let center = random_unit(&mut rng);
                let kappa = rng.gen_range(3.0..10.0);
                let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
                let magnitude = rng.gen_range(0.6..1.2);
                let base = rng.gen_range(-0.5..0.5);
                roles.push(if b < n_age {
                    Role::Age { base, slope: sign * magnitude }
                } else if b == k - 1 && k >= 3 {
                    Role::Preterm { slope: sign * magnitude }
                } else {
                    Role::Nuisance
                });
                let mirrored = [-center[0], center[1], center[2]];
                let bump = |c: &Vec3| -> Vec<f64> {
                    mesh.vertices()
                        .iter()
                        .map(|v| (kappa * (dot(c, v) - 1.0)).exp())
                        .collect()
                };
                basis_left.push(bump(&center));
                basis_right.push(bump(&mirrored));
            }
        }
        Ok(Synthesizer {
            spec,
            mesh,
            roles,
            basis_left,
            basis_right,
        })
    }

    pub fn spec(&self) -> &SyntheticSpec {
        &self.spec
    }

    pub fn mesh(&self) -> &Icosphere {
        &self.mesh
    }

    pub fn subject(&self, index: usize) -> SubjectRecord {
        let s = &self.spec;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[s.seed, 1, index as u64]));
        let scan_age = rng.gen_range(s.age_min..s.age_max);
        let preterm = rng.gen_bool(s.preterm_fraction);
        let offset = rng.gen_range(PRETERM_OFFSET.0..PRETERM_OFFSET.1);
        let jitter = match s.amplitude {
            AmplitudeModel::Identity => 0.0,
            AmplitudeModel::Developmental { age_jitter } => {
                age_jitter * Normal::new(0.0, 1.0).expect("unit normal").sample(&mut rng)
            }
        };
        SubjectRecord {
            index,
            id: s.subject_id(index),
            scan_age,
            birth_age: if preterm { scan_age - offset } else { scan_age },
            preterm,
            apparent_age: scan_age + jitter,
        }
    }

    fn amplitudes(&self, subject: &SubjectRecord, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let s = &self.spec;
        if s.amplitude == AmplitudeModel::Identity {
            return vec![subject.scan_age; self.roles.len()];
        }
        let mid = 0.5 * (s.age_min + s.age_max);
        let half = 0.5 * (s.age_max - s.age_min);
        let u = (subject.apparent_age - mid) / half;
        let prematurity = (subject.scan_age - subject.birth_age) / PRETERM_OFFSET.1;
        let free = Normal::new(0.0, 0.6).expect("valid normal");
        self.roles
            .iter()
            .map(|role| match *role {
                Role::Age { base, slope } => base + slope * u,
                Role::Preterm { slope } => slope * prematurity,
                Role::Nuisance => free.sample(rng),
            })
            .collect()
    }

    /// Signal of one hemisphere in its native orientation: right
    /// hemispheres are mirror images of the left layout.
    pub fn signal(&self, index: usize, hemisphere: Hemisphere) -> Result<SurfaceSignal> {
        let subject = self.subject(index);
        let hemi = match hemisphere {
            Hemisphere::Left => 0,
            Hemisphere::Right => 1,
        };
        let mut rng =
            ChaCha8Rng::seed_from_u64(derive_seed(&[self.spec.seed, 2, index as u64, hemi]));
        let amplitudes = self.amplitudes(&subject, &mut rng);
        let basis = match hemisphere {
            Hemisphere::Left => &self.basis_left,
            Hemisphere::Right => &self.basis_right,
        };
        let (c, k, nv) = (self.spec.channels, self.spec.bases_per_channel, self.mesh.vertex_count());
        let noise = Normal::new(0.0, self.spec.noise_std.max(0.0))
            .map_err(|e| Error::Config(e.to_string()))?;
        let mut values = vec![0.0; nv * c];
        for v in 0..nv {
            for ch in 0..c {
                let mut x = 0.0;
                for b in 0..k {
                    let i = ch * k + b;
                    x += amplitudes[i] * basis[i][v];
                }
                if self.spec.noise_std > 0.0 {
                    x += noise.sample(&mut rng);
                }
                values[v * c + ch] = x;
            }
        }
        SurfaceSignal::new(self.spec.channel_names(), values)
    }

    /// Manifest rows for every subject and hemisphere, with paths under
    /// `signals/`.
    pub fn manifest(&self) -> DatasetManifest {
        let splits = assign_splits(self.spec.subjects, derive_seed(&[self.spec.seed, 3]));
        let mut rows = Vec::with_capacity(2 * self.spec.subjects);
        for (i, split) in splits.into_iter().enumerate() {
            let subject = self.subject(i);
            for hemisphere in [Hemisphere::Left, Hemisphere::Right] {
                rows.push(ManifestRow {
                    subject: subject.id.clone(),
                    hemisphere,
                    path: format!("signals/{}_{}.ssig", subject.id, hemisphere.tag()),
                    scan_age: subject.scan_age,
                    birth_age: subject.birth_age,
                    split,
                });
            }
        }
        DatasetManifest { rows }
    }
}

/// File name of the manifest inside a generated dataset directory.
pub const MANIFEST_FILE: &str = "manifest.csv";

/// Writes every signal, the mesh and `manifest.csv` under `out_dir`.
pub fn generate_synthetic(spec: &SyntheticSpec, out_dir: impl AsRef<Path>) -> Result<DatasetManifest> {
    let out_dir = out_dir.as_ref();
    let synth = Synthesizer::new(spec.clone())?;
    let manifest = synth.manifest();
    write_mesh(out_dir.join(format!("ico{}.smesh", spec.mesh_order)), synth.mesh())?;
    for (i, pair) in manifest.rows.chunks(2).enumerate() {
        for row in pair {
            let signal = synth.signal(i, row.hemisphere)?;
            write_signal(out_dir.join(&row.path), &signal)?;
        }
    }
    manifest.write(out_dir.join(MANIFEST_FILE))?;
    crate::format::write_file(&out_dir.join("synth.cfg"), spec.to_text().as_bytes())?;
    Ok(manifest)
}
