#![allow(dead_code)]

pub mod oracles;

use std::path::{Path, PathBuf};

use docfusion::dataset::{DatasetManifest, LabelSet, PageRecord, Split};
use docfusion::image::PageImage;
use docfusion::ingest::resize_for_ocr;
use docfusion::nn::{build_network, LayerSpec, Network, NetworkSpec, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOLERANCE: f64 = 1e-4;
/// Denominator floor for the relative error, so gradients that are zero
/// up to rounding compare on an absolute scale.
pub const FD_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Dense,
    Conv2D,
    MaxPool2D,
    BatchNorm,
    ReLU,
    SoftmaxCrossEntropy,
}

pub const ALL_KINDS: [LayerKind; 6] = [
    LayerKind::Dense,
    LayerKind::Conv2D,
    LayerKind::MaxPool2D,
    LayerKind::BatchNorm,
    LayerKind::ReLU,
    LayerKind::SoftmaxCrossEntropy,
];

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FD_FLOOR)
}

/// A small network exercising one layer kind, with a random batch and
/// labels. Shapes are drawn from `rng`.
pub fn gradient_fixture(kind: LayerKind, seed: u64) -> (Network, Tensor, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let batch = rng.gen_range(2..=4);
    let (input_shape, layers) = match kind {
        LayerKind::Dense => {
            let (i, o) = (rng.gen_range(2..=6), rng.gen_range(2..=5));
            (vec![i], vec![LayerSpec::dense(i, o), LayerSpec::Softmax])
        }
        LayerKind::Conv2D => {
            let (ci, co) = (rng.gen_range(1..=3), rng.gen_range(1..=3));
            let (h, w) = (rng.gen_range(4..=7), rng.gen_range(4..=7));
            let k = rng.gen_range(1..=3);
            let s = rng.gen_range(1..=2);
            let p = rng.gen_range(0..=1);
            (
                vec![ci, h, w],
                vec![
                    LayerSpec::conv_padded(ci, co, k, s, p),
                    LayerSpec::Flatten,
                    LayerSpec::Softmax,
                ],
            )
        }
        LayerKind::MaxPool2D => {
            let c = rng.gen_range(1..=3);
            let (h, w) = (rng.gen_range(4..=7), rng.gen_range(4..=7));
            let win = rng.gen_range(2..=3);
            let s = rng.gen_range(1..=2);
            (
                vec![c, h, w],
                vec![
                    LayerSpec::max_pool(win, s),
                    LayerSpec::Flatten,
                    LayerSpec::Softmax,
                ],
            )
        }
        LayerKind::BatchNorm => {
            if rng.gen_bool(0.5) {
                let f = rng.gen_range(2..=5);
                (vec![f], vec![LayerSpec::batch_norm(f), LayerSpec::Softmax])
            } else {
                let c = rng.gen_range(1..=3);
                let (h, w) = (rng.gen_range(2..=4), rng.gen_range(2..=4));
                (
                    vec![c, h, w],
                    vec![
                        LayerSpec::batch_norm(c),
                        LayerSpec::Flatten,
                        LayerSpec::Softmax,
                    ],
                )
            }
        }
        LayerKind::ReLU => {
            let f = rng.gen_range(2..=6);
            (vec![f], vec![LayerSpec::ReLU, LayerSpec::Softmax])
        }
        LayerKind::SoftmaxCrossEntropy => {
            let f = rng.gen_range(2..=8);
            (vec![f], vec![LayerSpec::Softmax])
        }
    };
    let spec = NetworkSpec::new(input_shape.clone(), layers, seed);
    let mut network = build_network(&spec).expect("fixture spec is valid");
    // Move BatchNorm scale/shift off their 1/0 initialization so their
    // gradients are not special-cased.
    for p in network.params_mut() {
        *p += rng.gen_range(-0.3..0.3);
    }
    let per: usize = input_shape.iter().product();
    let data: Vec<f64> = (0..batch * per)
        .map(|_| {
            // Keep ReLU inputs away from the kink.
            let magnitude = rng.gen_range(0.05..1.5);
            if rng.gen_bool(0.5) {
                magnitude
            } else {
                -magnitude
            }
        })
        .collect();
    let mut shape = vec![batch];
    shape.extend(&input_shape);
    let c = network.num_classes();
    let labels = (0..batch).map(|_| rng.gen_range(0..c)).collect();
    (network, Tensor::new(shape, data).unwrap(), labels)
}

/// Worst relative error between analytic and central-difference gradients
/// over every parameter and every input element.
pub fn max_gradient_error(network: &Network, batch: &Tensor, labels: &[usize]) -> f64 {
    let grads = network.gradients(batch, labels).unwrap();
    let mut worst: f64 = 0.0;
    for i in 0..network.param_count() {
        let mut probe = network.clone();
        probe.params_mut()[i] += FD_STEP;
        let up = probe.loss(batch, labels).unwrap();
        probe.params_mut()[i] -= 2.0 * FD_STEP;
        let down = probe.loss(batch, labels).unwrap();
        let numeric = (up - down) / (2.0 * FD_STEP);
        worst = worst.max(relative_error(grads.params[i], numeric));
    }
    for i in 0..batch.len() {
        let mut probe = batch.clone();
        probe.data_mut()[i] += FD_STEP;
        let up = network.loss(&probe, labels).unwrap();
        probe.data_mut()[i] -= 2.0 * FD_STEP;
        let down = network.loss(&probe, labels).unwrap();
        let numeric = (up - down) / (2.0 * FD_STEP);
        worst = worst.max(relative_error(grads.input.data()[i], numeric));
    }
    worst
}

/// A manifest planting one shared "image not available" page across
/// classes and splits in the given per-class counts, plus `unique` pages
/// of distinct text.
pub fn planted_duplicate_manifest(
    dir: &Path,
    per_class: &[(usize, usize)],
    train: usize,
    unique: usize,
) -> DatasetManifest {
    let texts = dir.join("texts");
    std::fs::create_dir_all(&texts).unwrap();
    let mut records = Vec::new();
    let mut n = 0;
    for &(class, count) in per_class {
        for _ in 0..count {
            let path = texts.join(format!("dup{n:04}.txt"));
            // OCR output formatting varies; normalization must absorb it.
            let text = if n % 2 == 0 {
                "Image not available\n"
            } else {
                "IMAGE  NOT\navailable "
            };
            std::fs::write(&path, text).unwrap();
            records.push(PageRecord {
                id: format!("dup{n:04}"),
                image_path: None,
                text_path: Some(path),
                label: class,
                split: if n < train { Split::Train } else { Split::Test },
            });
            n += 1;
        }
    }
    for u in 0..unique {
        let path = texts.join(format!("page{u:04}.txt"));
        std::fs::write(
            &path,
            format!("memo number {u} regarding shipment {}", u * 7),
        )
        .unwrap();
        records.push(PageRecord {
            id: format!("page{u:04}"),
            image_path: None,
            text_path: Some(path),
            label: u % 16,
            split: if u % 5 == 0 {
                Split::Test
            } else {
                Split::Train
            },
        });
    }
    DatasetManifest::new(LabelSet::numbered(16).unwrap(), records).unwrap()
}

/// Class counts of the planted fixture, listed in ascending class order
/// so the report has to do the sorting.
pub const PLANTED_COUNTS: [(usize, usize); 11] = [
    (0, 1),
    (1, 21),
    (4, 322),
    (5, 22),
    (7, 1),
    (9, 30),
    (10, 3),
    (11, 1),
    (12, 22),
    (13, 1),
    (15, 2),
];

fn write_script(path: &Path, body: &str) {
    std::fs::write(path, format!("#!/bin/sh\n{body}")).unwrap();
    #[cfg(unix)]
    {
        use std::os::unix::fs::PermissionsExt;
        std::fs::set_permissions(path, std::fs::Permissions::from_mode(0o755)).unwrap();
    }
}

/// An OCR stand-in that writes `text` for every page. Invoked as
/// `<script> <input> <output-base>`.
pub fn stub_ocr_fixed(dir: &Path, text: &str) -> PathBuf {
    let script = dir.join("stub-ocr-fixed.sh");
    write_script(&script, &format!("printf '%s' '{text}' > \"$2.txt\"\n"));
    script
}

/// An OCR stand-in that recognizes known pages: each page is keyed by the
/// SHA-256 of the PNG the extractor will hand it (the page resized to
/// `longest` and re-encoded), and unknown pages fail with status 3.
pub fn stub_ocr_lookup(dir: &Path, pages: &[(&PageImage, &str)], longest: usize) -> PathBuf {
    let table = dir.join("ocr-table");
    std::fs::create_dir_all(&table).unwrap();
    let scratch = tempfile::tempdir().unwrap();
    for (page, text) in pages {
        let png = scratch.path().join("p.png");
        resize_for_ocr(page, longest)
            .unwrap()
            .save_png(&png)
            .unwrap();
        let key = hex::encode(Sha256::digest(std::fs::read(&png).unwrap()));
        std::fs::write(table.join(key), text).unwrap();
    }
    let script = dir.join("stub-ocr-lookup.sh");
    write_script(
        &script,
        &format!(
            "key=$(sha256sum \"$1\" | cut -d' ' -f1)\n[ -f '{t}'/\"$key\" ] || {{ echo \"unknown page\" >&2; exit 3; }}\ncat '{t}'/\"$key\" > \"$2.txt\"\n",
            t = table.display()
        ),
    );
    script
}
