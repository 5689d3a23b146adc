use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::Hemisphere;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Data(format!("unknown split {other:?}"))),
        }
    }
}

/// Fraction of subjects assigned to training and to validation; the rest go
/// to test.
pub const SPLIT_FRACTIONS: (f64, f64) = (0.8, 0.1);

/// Assigns subjects `0..n` to splits after a seeded shuffle.
pub fn assign_splits(subjects: usize, seed: u64) -> Vec<Split> {
    let mut order: Vec<usize> = (0..subjects).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = (subjects as f64 * SPLIT_FRACTIONS.0).round() as usize;
    let n_val = (subjects as f64 * SPLIT_FRACTIONS.1).round() as usize;
    let mut splits = vec![Split::Test; subjects];
    for (rank, &s) in order.iter().enumerate() {
        splits[s] = if rank < n_train {
            Split::Train
        } else if rank < n_train + n_val {
            Split::Val
        } else {
            Split::Test
        };
    }
    splits
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestRow {
    pub subject: String,
    pub hemisphere: Hemisphere,
    /// Signal file, relative to the manifest's directory unless absolute.
    pub path: String,
    pub scan_age: f64,
    pub birth_age: f64,
    pub split: Split,
}

impl ManifestRow {
    /// `<subject>_<L|R>`.
    pub fn example_id(&self) -> String {
        format!("{}_{}", self.subject, self.hemisphere.tag())
    }
}

const HEADER: [&str; 6] = ["subject", "hemi", "path", "scan_age", "birth_age", "split"];

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DatasetManifest {
    pub rows: Vec<ManifestRow>,
}

impl DatasetManifest {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestRow> {
        self.rows.iter().filter(move |r| r.split == split)
    }

    pub fn find(&self, example_id: &str) -> Option<&ManifestRow> {
        self.rows.iter().find(|r| r.example_id() == example_id)
    }

    /// Checks that no subject spans two splits.
    pub fn check_subject_splits(&self) -> Result<()> {
        let mut seen: std::collections::HashMap<&str, Split> = Default::default();
        for r in &self.rows {
            if let Some(&s) = seen.get(r.subject.as_str()) {
                if s != r.split {
                    return Err(Error::Data(format!(
                        "subject {} appears in both {s} and {}",
                        r.subject, r.split
                    )));
                }
            }
            seen.insert(&r.subject, r.split);
        }
        Ok(())
    }

    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let csv_err = |e: csv::Error| Error::Data(format!("manifest csv: {e}"));
        w.write_record(HEADER).map_err(csv_err)?;
        for r in &self.rows {
            w.write_record([
                r.subject.as_str(),
                r.hemisphere.tag(),
                r.path.as_str(),
                &r.scan_age.to_string(),
                &r.birth_age.to_string(),
                r.split.as_str(),
            ])
            .map_err(csv_err)?;
        }
        w.into_inner()
            .map_err(|e| Error::Data(format!("manifest csv: {e}")))
    }

    pub fn from_csv(bytes: &[u8]) -> Result<Self> {
        let mut r = csv::Reader::from_reader(bytes);
        let parse_err = |e: csv::Error| {
            let offset = e.position().map_or(0, |p| p.byte());
            Error::Parse {
                offset,
                message: format!("manifest: {e}"),
            }
        };
        let header = r.headers().map_err(parse_err)?.clone();
        if header.iter().ne(HEADER.iter().copied()) {
            return Err(Error::Parse {
                offset: 0,
                message: format!("manifest header {header:?} differs from {HEADER:?}"),
            });
        }
        let mut rows = Vec::new();
        for record in r.records() {
            let record = record.map_err(parse_err)?;
            let offset = record.position().map_or(0, |p| p.byte());
            let bad = |what: &str| Error::Parse {
                offset,
                message: format!("manifest row has bad {what}"),
            };
            let age = |i: usize, what: &str| -> Result<f64> {
                record[i]
                    .parse::<f64>()
                    .ok()
                    .filter(|a| a.is_finite())
                    .ok_or_else(|| bad(what))
            };
            rows.push(ManifestRow {
                subject: record[0].to_owned(),
                hemisphere: Hemisphere::parse(&record[1]).map_err(|_| bad("hemi"))?,
                path: record[2].to_owned(),
                scan_age: age(3, "scan_age")?,
                birth_age: age(4, "birth_age")?,
                split: record[5].parse().map_err(|_| bad("split"))?,
            });
        }
        let manifest = DatasetManifest { rows };
        manifest.check_subject_splits()?;
        Ok(manifest)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        crate::format::write_file(path.as_ref(), &self.to_csv()?)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_csv(&crate::format::read_file(path.as_ref())?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hundred_subjects_split_eighty_ten_ten() {
        let s = assign_splits(100, 4);
        let count = |x| s.iter().filter(|&&y| y == x).count();
        assert_eq!((count(Split::Train), count(Split::Val), count(Split::Test)), (80, 10, 10));
        assert_eq!(s, assign_splits(100, 4));
        assert_ne!(s, assign_splits(100, 5));
    }

    #[test]
    fn csv_round_trip() {
        let m = DatasetManifest {
            rows: vec![
                ManifestRow {
                    subject: "sub-0001".into(),
                    hemisphere: Hemisphere::Left,
                    path: "signals/sub-0001_L.ssig".into(),
                    scan_age: 40.123456789,
                    birth_age: 32.5,
                    split: Split::Val,
                },
                ManifestRow {
                    subject: "sub-0001".into(),
                    hemisphere: Hemisphere::Right,
                    path: "signals/sub-0001_R.ssig".into(),
                    scan_age: 40.123456789,
                    birth_age: 32.5,
                    split: Split::Val,
                },
            ],
        };
        let bytes = m.to_csv().unwrap();
        assert!(bytes.starts_with(b"subject,hemi,path,scan_age,birth_age,split\n"));
        assert_eq!(DatasetManifest::from_csv(&bytes).unwrap(), m);
        assert_eq!(m.find("sub-0001_R").unwrap().hemisphere, Hemisphere::Right);
    }

    #[test]
    fn subject_in_two_splits_is_rejected() {
        let text = "subject,hemi,path,scan_age,birth_age,split\n\
                    a,L,a_L.ssig,30,30,train\n\
                    a,R,a_R.ssig,30,30,test\n";
        assert!(DatasetManifest::from_csv(text.as_bytes()).is_err());
    }

    #[test]
    fn bad_rows_report_offsets() {
        let text = "subject,hemi,path,scan_age,birth_age,split\na,L,x,thirty,30,train\n";
        match DatasetManifest::from_csv(text.as_bytes()) {
            Err(Error::Parse { offset, .. }) => assert_eq!(offset, 43),
            other => panic!("{other:?}"),
        }
    }
}
