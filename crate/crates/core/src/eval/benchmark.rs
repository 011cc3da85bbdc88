//! Fit every requested method, score both test sets and tabulate AUROC.

use std::time::Instant;

use rayon::prelude::*;

use crate::detector::{DetectorParams, FittedDetector};
use crate::error::{OodError, Result};
use crate::eval::auroc::auroc;
use crate::eval::report::{EvalReport, EvalRow};
use crate::io::config::DatasetFiles;
use crate::io::{load_files, DatasetBundle, Method, RunConfig, ScoreVector};
use crate::seed::{derive_seed, stable_hash};

/// Seed for one (pair, method) cell, independent of execution order.
pub fn cell_seed(master: u64, in_name: &str, ood_name: &str, method: Method) -> u64 {
    derive_seed(master, stable_hash(&format!("{in_name}\u{1f}{ood_name}\u{1f}{}", method.id())))
}

fn parameters(config: &RunConfig) -> serde_json::Value {
    serde_json::json!({
        "methods": config.methods,
        "knn": config.knn,
        "gaussian": config.gaussian,
        "iforest": config.iforest,
        "seed": config.seed,
    })
}

/// Runs the forward orientation and, when `reverse` is set, the swapped one.
pub fn run_benchmark(config: &RunConfig) -> Result<EvalReport> {
    let mut pairs: Vec<(&str, &str, &DatasetFiles)> =
        vec![(config.in_name.as_str(), config.ood_name.as_str(), &config.files)];
    if let Some(rev) = &config.reverse {
        pairs.push((config.ood_name.as_str(), config.in_name.as_str(), rev));
    }
    let mut report = EvalReport::new(parameters(config));
    for (in_name, ood_name, files) in pairs {
        let bundle = load_files(files, &config.methods).map_err(|e| annotate(e, "load", in_name, ood_name))?;
        for row in run_pair(&bundle, in_name, ood_name, config)? {
            report.push(row)?;
        }
    }
    Ok(report)
}

fn annotate(e: OodError, method: &str, in_name: &str, ood_name: &str) -> OodError {
    OodError::InCell {
        method: method.into(),
        pair: format!("{in_name} vs {ood_name}"),
        source: Box::new(e),
    }
}

/// All cells for one loaded bundle. Cells run in parallel; rows and the
/// first error are reported in method order.
pub fn run_pair(bundle: &DatasetBundle, in_name: &str, ood_name: &str, config: &RunConfig) -> Result<Vec<EvalRow>> {
    let results: Vec<Result<Vec<EvalRow>>> = config
        .methods
        .par_iter()
        .map(|&method| {
            run_cell(bundle, method, in_name, ood_name, config)
                .map_err(|e| annotate(e, method.id(), in_name, ood_name))
        })
        .collect();
    let mut rows = Vec::new();
    for r in results {
        rows.extend(r?);
    }
    Ok(rows)
}

fn run_cell(bundle: &DatasetBundle, method: Method, in_name: &str, ood_name: &str, config: &RunConfig) -> Result<Vec<EvalRow>> {
    let ood = bundle.test_ood.as_ref().ok_or_else(|| OodError::MissingInput {
        method: method.id().into(),
        what: "OOD test embeddings",
    })?;
    let params = DetectorParams {
        knn: config.knn.clone(),
        gaussian: config.gaussian.clone(),
        iforest: config.iforest.clone(),
        seed: cell_seed(config.seed, in_name, ood_name, method),
    };
    let start = Instant::now();
    let detector = FittedDetector::fit(method, bundle, &params)?;
    let (ks, in_scores, ood_scores): (Vec<Option<usize>>, Vec<ScoreVector>, Vec<ScoreVector>) = if method.is_knn() {
        let ks = config.knn.k.values();
        (
            ks.iter().map(|&k| Some(k)).collect(),
            detector.score_ks(&bundle.test_in, &ks)?,
            detector.score_ks(ood, &ks)?,
        )
    } else {
        (
            vec![None],
            vec![detector.score_split(&bundle.test_in)?],
            vec![detector.score_split(ood)?],
        )
    };
    let wall_time = start.elapsed();
    ks.into_iter()
        .zip(in_scores.iter().zip(&ood_scores))
        .map(|(k, (a, b))| {
            Ok(EvalRow {
                in_dataset: in_name.into(),
                ood_dataset: ood_name.into(),
                method,
                k,
                auroc: auroc(a, b)?,
                n_in: a.len(),
                n_ood: b.len(),
                seed: config.seed,
                ridge: detector.ridge(),
                wall_time,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::synth::{generate, write_bundle, SynthParams};

    fn small_bundle_dir() -> tempfile::TempDir {
        let dir = tempfile::tempdir().unwrap();
        let params = SynthParams {
            n_train: 300,
            n_test_in: 60,
            n_ood: 60,
            ..SynthParams::standard(5)
        };
        write_bundle(&generate(&params).unwrap(), dir.path()).unwrap();
        dir
    }

    fn config(dir: &std::path::Path) -> RunConfig {
        let mut cfg = RunConfig::from_file(dir.join("run.json")).unwrap();
        cfg.iforest.psi = 64;
        cfg.knn.k = crate::io::config::KValues::Many(vec![5, 10]);
        cfg
    }

    #[test]
    fn identical_test_sets_give_half() {
        let dir = small_bundle_dir();
        let mut cfg = config(dir.path());
        cfg.files.test_ood_embeddings = Some(cfg.files.test_in_embeddings.clone());
        cfg.files.test_ood_probs = cfg.files.test_in_probs.clone();
        let report = run_benchmark(&cfg).unwrap();
        assert_eq!(report.len(), 5 + 3 * 2);
        for row in report.rows() {
            assert_eq!(row.auroc, 0.5, "{}", row.method);
        }
    }

    #[test]
    fn reverse_orientation_adds_rows() {
        let dir = small_bundle_dir();
        let mut cfg = config(dir.path());
        cfg.methods = vec![Method::KnnDistance, Method::Msp];
        let mut rev = cfg.files.clone();
        std::mem::swap(&mut rev.test_in_embeddings, rev.test_ood_embeddings.as_mut().unwrap());
        std::mem::swap(&mut rev.test_in_probs, &mut rev.test_ood_probs);
        cfg.reverse = Some(rev);
        let report = run_benchmark(&cfg).unwrap();
        assert_eq!(report.pairs().len(), 2);
        let fwd = report.get("synthetic", "displaced", Method::Msp, None).unwrap().auroc;
        let back = report.get("displaced", "synthetic", Method::Msp, None).unwrap().auroc;
        // same model, test sets swapped
        assert_eq!(fwd + back, 1.0);
    }

    #[test]
    fn errors_name_the_cell() {
        let dir = small_bundle_dir();
        let mut cfg = config(dir.path());
        cfg.methods = vec![Method::KnnDistance];
        cfg.knn.k = crate::io::config::KValues::One(1000);
        let err = run_benchmark(&cfg).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("knn_distance on synthetic vs displaced"), "{msg}");
        assert!(msg.contains("K exceeds training size"), "{msg}");
    }
}
