use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::manifest::{Manifest, ManifestEntry};
use super::netpbm::Raster;
use super::synth::{render, render_conflict, Scene};
use crate::blocks::DomainLabel;
use crate::error::{Result, SumError};
use crate::tensor::{derive_seed, SplitMix64};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GenerateOptions {
    pub per_domain: usize,
    pub size: usize,
    pub seed: u64,
    /// Extra image pairs with conflicting natural-eye / e-commerce targets,
    /// written to their own manifests.
    pub conflict_pairs: usize,
}

#[derive(Clone, Debug)]
pub struct GeneratedDataset {
    pub train: Manifest,
    pub val: Manifest,
    pub test: Manifest,
    pub conflict_train: Option<Manifest>,
    pub conflict_val: Option<Manifest>,
}

struct Job {
    scene_seed: u64,
    label: DomainLabel,
    stem: String,
}

fn write_scene(out: &Path, image: &str, stem: &str, sc: &Scene) -> Result<ManifestEntry> {
    let s = sc.size;
    let entry = ManifestEntry {
        image: PathBuf::from(format!("images/{image}.ppm")),
        map: PathBuf::from(format!("maps/{stem}.pgm")),
        fix: PathBuf::from(format!("fix/{stem}.pgm")),
        domain: sc.label,
    };
    Raster::new(s, s, 3, sc.image.clone())?.write(&out.join(&entry.image))?;
    Raster::new(s, s, 1, sc.map.clone())?.write(&out.join(&entry.map))?;
    let mut fix = vec![0u8; s * s];
    for &i in &sc.fixations {
        fix[i] = 255;
    }
    Raster::new(s, s, 1, fix)?.write(&out.join(&entry.fix))?;
    Ok(entry)
}

/// Writes `images/`, `maps/`, `fix/` and the manifests `train.tsv`,
/// `val.tsv`, `test.tsv` (80/10/10 after a seeded shuffle) under `out`.
/// With conflict pairs, also `conflict_train.tsv` and `conflict_val.tsv`.
/// The same options always produce byte-identical files.
pub fn generate_dataset(out: &Path, opts: &GenerateOptions) -> Result<GeneratedDataset> {
    if opts.per_domain == 0 {
        return Err(SumError::Config("per-domain sample count must be positive".into()));
    }
    if opts.size < 32 || !opts.size.is_multiple_of(32) {
        return Err(SumError::Config(format!(
            "size must be a positive multiple of 32, got {}",
            opts.size
        )));
    }
    for d in ["images", "maps", "fix"] {
        let p = out.join(d);
        fs::create_dir_all(&p).map_err(|e| SumError::io(&p, e))?;
    }
    let n = opts.per_domain;
    let jobs: Vec<Job> = DomainLabel::ALL
        .iter()
        .flat_map(|&d| {
            (0..n).map(move |i| Job {
                scene_seed: opts.seed ^ (d.code() * n + i) as u64,
                label: d,
                stem: format!("{}-{i:04}", d.name()),
            })
        })
        .collect();
    let entries = jobs
        .par_iter()
        .map(|j| {
            let sc = render(j.label, opts.size, j.scene_seed)?;
            write_scene(out, &j.stem, &j.stem, &sc)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut order: Vec<usize> = (0..entries.len()).collect();
    SplitMix64::new(derive_seed(opts.seed, "split")).shuffle(&mut order);
    let total = entries.len();
    let n_train = total * 8 / 10;
    let n_val = total / 10;
    let pick = |range: &[usize]| {
        let mut m = Manifest::new(out);
        let mut idx = range.to_vec();
        idx.sort_unstable();
        m.entries = idx.iter().map(|&i| entries[i].clone()).collect();
        m
    };
    let train = pick(&order[..n_train]);
    let val = pick(&order[n_train..n_train + n_val]);
    let test = pick(&order[n_train + n_val..]);
    train.write(&out.join("train.tsv"))?;
    val.write(&out.join("val.tsv"))?;
    test.write(&out.join("test.tsv"))?;

    let (mut conflict_train, mut conflict_val) = (None, None);
    if opts.conflict_pairs > 0 {
        let base = derive_seed(opts.seed, "conflict");
        let pairs = (0..opts.conflict_pairs)
            .into_par_iter()
            .map(|i| {
                let scenes = render_conflict(opts.size, base ^ i as u64)?;
                let image = format!("conflict-{i:04}");
                scenes
                    .iter()
                    .map(|sc| write_scene(out, &image, &format!("{image}-{}", sc.label.name()), sc))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        let n_val = if pairs.len() >= 2 { (pairs.len() / 5).max(1) } else { 0 };
        let split = pairs.len() - n_val;
        let mut ct = Manifest::new(out);
        ct.entries = pairs[..split].concat();
        let mut cv = Manifest::new(out);
        cv.entries = pairs[split..].concat();
        ct.write(&out.join("conflict_train.tsv"))?;
        cv.write(&out.join("conflict_val.tsv"))?;
        conflict_train = Some(ct);
        conflict_val = Some(cv);
    }
    Ok(GeneratedDataset {
        train,
        val,
        test,
        conflict_train,
        conflict_val,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn opts(n: usize) -> GenerateOptions {
        GenerateOptions {
            per_domain: n,
            size: 32,
            seed: 7,
            conflict_pairs: 0,
        }
    }

    #[test]
    fn split_sizes_and_loadable() {
        let dir = tempfile::tempdir().unwrap();
        let g = generate_dataset(dir.path(), &opts(10)).unwrap();
        assert_eq!((g.train.entries.len(), g.val.entries.len(), g.test.entries.len()), (32, 4, 4));
        let back = Manifest::read(&dir.path().join("train.tsv")).unwrap();
        assert_eq!(back.entries, g.train.entries);
        let samples = back.load_samples(32).unwrap();
        assert_eq!(samples.len(), 32);
        assert!(samples.iter().all(|s| s.fixations.iter().sum::<f64>() == 20.0));
    }

    #[test]
    fn files_match_in_memory_samples() {
        let dir = tempfile::tempdir().unwrap();
        let g = generate_dataset(dir.path(), &opts(2)).unwrap();
        let mem = crate::data::synthetic_set(32, 2, 7).unwrap();
        let mut all = g.train.entries.clone();
        all.extend(g.val.entries.iter().cloned());
        all.extend(g.test.entries.iter().cloned());
        let mut m = Manifest::new(dir.path());
        m.entries = all;
        for s in m.load_samples(32).unwrap() {
            let twin = mem.iter().find(|t| t.id == s.id).unwrap();
            assert_eq!(&s, twin);
        }
    }

    #[test]
    fn rerun_is_byte_identical() {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let o = GenerateOptions {
            conflict_pairs: 3,
            ..opts(2)
        };
        generate_dataset(a.path(), &o).unwrap();
        generate_dataset(b.path(), &o).unwrap();
        let mut files = 0;
        for sub in ["images", "maps", "fix", "."] {
            for e in fs::read_dir(a.path().join(sub)).unwrap() {
                let p = e.unwrap().path();
                if p.is_file() {
                    let rel = p.strip_prefix(a.path()).unwrap();
                    assert_eq!(fs::read(&p).unwrap(), fs::read(b.path().join(rel)).unwrap());
                    files += 1;
                }
            }
        }
        assert!(files > 20);
    }

    #[test]
    fn conflict_manifests_pair_up() {
        let dir = tempfile::tempdir().unwrap();
        let g = generate_dataset(
            dir.path(),
            &GenerateOptions {
                conflict_pairs: 5,
                ..opts(1)
            },
        )
        .unwrap();
        let (ct, cv) = (g.conflict_train.unwrap(), g.conflict_val.unwrap());
        assert_eq!((ct.entries.len(), cv.entries.len()), (8, 2));
        for pair in ct.entries.chunks(2) {
            assert_eq!(pair[0].image, pair[1].image);
            assert_ne!(pair[0].map, pair[1].map);
            assert_ne!(pair[0].domain, pair[1].domain);
        }
    }

    #[test]
    fn rejects_bad_options() {
        let dir = tempfile::tempdir().unwrap();
        assert!(generate_dataset(dir.path(), &opts(0)).is_err());
        let o = GenerateOptions { size: 40, ..opts(1) };
        assert!(generate_dataset(dir.path(), &o).is_err());
    }
}
