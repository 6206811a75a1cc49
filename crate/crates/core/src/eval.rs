//! Evaluation reports, transferability and parameter sweeps.

use std::io::{Read, Write};
use std::path::Path;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attack::AttackMode;
use crate::audio::{rel_loudness, snr, AudioSample};
use crate::error::{check_len, Error, Result};
use crate::greedy::{greedy_uap, GreedyConfig};
use crate::model::{LabeledSample, Model};
use crate::penalty::{penalty_uap, PenaltyConfig};
use crate::perturbation::{Method, Perturbation};

pub const DEFAULT_KAPPA_GRID: [f64; 6] = [0.0, 10.0, 20.0, 40.0, 60.0, 90.0];
pub const DEFAULT_M_GRID: [usize; 6] = [1, 5, 10, 50, 100, 500];

/// Outcome for one evaluated sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub sample_id: String,
    pub clean_pred: usize,
    pub perturbed_pred: usize,
    pub success: bool,
    pub snr_db: f64,
    /// Undefined when the applied perturbation has no positive component.
    pub l_db: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: Method,
    pub mode: AttackMode,
    pub train_asr: Option<f64>,
    pub test_asr: f64,
    pub mean_snr: f64,
    pub mean_l_db: Option<f64>,
    pub rows: Vec<EvalRow>,
    /// Free-form settings of the run that produced the perturbation.
    pub config: serde_json::Value,
    /// Kept out of every written file so that artifacts stay reproducible.
    #[serde(skip)]
    pub elapsed: Duration,
}

impl EvalReport {
    /// Success rate recounted from the rows.
    pub fn recount(&self) -> f64 {
        self.rows.iter().filter(|r| r.success).count() as f64 / self.rows.len() as f64
    }

    pub fn write_rows_csv<W: Write>(&self, w: W) -> Result<()> {
        write_rows(&self.rows, w)
    }
}

pub fn write_rows<W: Write>(rows: &[EvalRow], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record([
        "sample_id",
        "clean_pred",
        "perturbed_pred",
        "success",
        "snr_db",
        "l_db",
    ])?;
    for r in rows {
        out.write_record([
            r.sample_id.clone(),
            r.clean_pred.to_string(),
            r.perturbed_pred.to_string(),
            r.success.to_string(),
            r.snr_db.to_string(),
            r.l_db.map(|v| v.to_string()).unwrap_or_default(),
        ])?;
    }
    out.flush().map_err(|e| Error::io("<csv>", e))
}

pub fn read_rows<R: Read>(r: R) -> Result<Vec<EvalRow>> {
    let mut rdr = csv::Reader::from_reader(r);
    let bad = |what: &str| Error::invalid(format!("malformed report column {what}"));
    rdr.records()
        .map(|rec| {
            let rec = rec?;
            let field = |i: usize| rec.get(i).ok_or_else(|| bad("count"));
            let l = field(5)?;
            Ok(EvalRow {
                sample_id: field(0)?.to_string(),
                clean_pred: field(1)?.parse().map_err(|_| bad("clean_pred"))?,
                perturbed_pred: field(2)?.parse().map_err(|_| bad("perturbed_pred"))?,
                success: field(3)?.parse().map_err(|_| bad("success"))?,
                snr_db: field(4)?.parse().map_err(|_| bad("snr_db"))?,
                l_db: if l.is_empty() {
                    None
                } else {
                    Some(l.parse().map_err(|_| bad("l_db"))?)
                },
            })
        })
        .collect()
}

/// Copies of the samples carrying their dataset labels.
pub fn labelled(samples: &[LabeledSample]) -> Vec<AudioSample> {
    samples
        .iter()
        .map(|s| {
            let mut a = s.sample.clone();
            a.label = Some(s.label);
            a
        })
        .collect()
}

/// Applies `pert` to every sample and scores it against the clean
/// prediction. SNR and loudness use the perturbation actually applied.
pub fn evaluate_uap(
    model: &Model,
    samples: &[LabeledSample],
    pert: &Perturbation,
    mode: AttackMode,
) -> Result<EvalReport> {
    let start = Instant::now();
    if samples.is_empty() {
        return Err(Error::invalid("nothing to evaluate"));
    }
    check_len(model.input_dim(), pert.dim())?;
    let rows = samples
        .par_iter()
        .map(|s| {
            let x = s.sample.samples();
            let clean = model.predict(x)?;
            let adv = pert.apply(x)?;
            let perturbed = model.predict(&adv)?;
            let applied: Vec<f64> = adv.iter().zip(x).map(|(a, b)| a - b).collect();
            Ok(EvalRow {
                sample_id: s.id.clone(),
                clean_pred: clean,
                perturbed_pred: perturbed,
                success: mode.is_success(perturbed, clean),
                snr_db: snr(x, &applied)?,
                l_db: rel_loudness(x, &applied).ok(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let n = rows.len() as f64;
    let defined: Vec<f64> = rows.iter().filter_map(|r| r.l_db).collect();
    Ok(EvalReport {
        method: pert.method,
        mode,
        train_asr: None,
        test_asr: rows.iter().filter(|r| r.success).count() as f64 / n,
        mean_snr: rows.iter().map(|r| r.snr_db).sum::<f64>() / n,
        mean_l_db: (!defined.is_empty())
            .then(|| defined.iter().sum::<f64>() / defined.len() as f64),
        rows,
        config: serde_json::to_value(&pert.info)?,
        elapsed: start.elapsed(),
    })
}

/// Either crafting method with its settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "lowercase")]
pub enum CraftConfig {
    Greedy(GreedyConfig),
    Penalty(PenaltyConfig),
}

impl CraftConfig {
    pub fn mode(&self) -> AttackMode {
        match self {
            CraftConfig::Greedy(c) => c.mode,
            CraftConfig::Penalty(c) => c.mode,
        }
    }

    pub fn method(&self) -> Method {
        match self {
            CraftConfig::Greedy(_) => Method::Greedy,
            CraftConfig::Penalty(_) => Method::Penalty,
        }
    }
}

/// A crafted perturbation with its training-set success rate.
#[derive(Debug, Clone, PartialEq)]
pub struct Crafted {
    pub perturbation: Perturbation,
    pub train_asr: f64,
    pub converged: bool,
    pub iterations: usize,
}

pub fn craft(model: &Model, train: &[AudioSample], cfg: &CraftConfig) -> Result<Crafted> {
    Ok(match cfg {
        CraftConfig::Greedy(c) => {
            let o = greedy_uap(model, train, c)?;
            Crafted {
                train_asr: o.train_asr(),
                converged: o.converged,
                iterations: o.epochs,
                perturbation: o.perturbation,
            }
        }
        CraftConfig::Penalty(c) => {
            let o = penalty_uap(model, train, c)?;
            Crafted {
                train_asr: o.train_asr(),
                converged: o.converged,
                iterations: o.iterations,
                perturbation: o.perturbation,
            }
        }
    })
}

/// Crafts on `train` and evaluates on `test`.
pub fn craft_and_evaluate(
    model: &Model,
    train: &[LabeledSample],
    test: &[LabeledSample],
    cfg: &CraftConfig,
) -> Result<(Crafted, EvalReport)> {
    let start = Instant::now();
    let crafted = craft(model, &labelled(train), cfg)?;
    let mut report = evaluate_uap(model, test, &crafted.perturbation, cfg.mode())?;
    report.train_asr = Some(crafted.train_asr);
    report.config = serde_json::to_value(cfg)?;
    report.elapsed = start.elapsed();
    Ok((crafted, report))
}

/// Success rates of each source model's perturbation against every model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferMatrix {
    pub names: Vec<String>,
    /// Row = source, column = victim; the diagonal is left undefined.
    pub asr: Vec<Vec<Option<f64>>>,
}

impl TransferMatrix {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["source".to_string()];
        header.extend(self.names.iter().cloned());
        out.write_record(&header)?;
        for (name, row) in self.names.iter().zip(&self.asr) {
            let mut rec = vec![name.clone()];
            rec.extend(
                row.iter()
                    .map(|v| v.map(|a| a.to_string()).unwrap_or_default()),
            );
            out.write_record(&rec)?;
        }
        out.flush().map_err(|e| Error::io("<csv>", e))
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let names: Vec<String> = rdr.headers()?.iter().skip(1).map(str::to_string).collect();
        let mut asr = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let row = rec
                .iter()
                .skip(1)
                .map(|f| {
                    if f.is_empty() {
                        Ok(None)
                    } else {
                        f.parse()
                            .map(Some)
                            .map_err(|_| Error::invalid(format!("bad matrix entry {f:?}")))
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            asr.push(row);
        }
        Ok(Self { names, asr })
    }
}

/// Entry `(i, j)` is the success rate of `perts[i]` on `models[j]`.
pub fn transfer_matrix(
    models: &[(String, Model)],
    perts: &[Perturbation],
    test: &[LabeledSample],
    mode: AttackMode,
) -> Result<TransferMatrix> {
    if models.len() < 2 {
        return Err(Error::invalid("transferability needs at least two models"));
    }
    check_len(models.len(), perts.len())?;
    let d = models[0].1.input_dim();
    for (_, m) in models {
        check_len(d, m.input_dim())?;
    }
    let mut asr = Vec::with_capacity(models.len());
    for (i, p) in perts.iter().enumerate() {
        let row = models
            .iter()
            .enumerate()
            .map(|(j, (_, m))| {
                if i == j {
                    Ok(None)
                } else {
                    evaluate_uap(m, test, p, mode).map(|r| Some(r.test_asr))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        asr.push(row);
    }
    Ok(TransferMatrix {
        names: models.iter().map(|(n, _)| n.clone()).collect(),
        asr,
    })
}

/// One cell of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub method: Method,
    pub mode: String,
    pub m: usize,
    pub kappa: Option<f64>,
    pub train_asr: f64,
    pub test_asr: f64,
    pub mean_snr: f64,
    pub mean_l_db: Option<f64>,
    pub converged: bool,
    pub iterations: usize,
}

impl SweepRow {
    fn new(crafted: &Crafted, report: &EvalReport, m: usize, kappa: Option<f64>) -> Self {
        Self {
            method: report.method,
            mode: report.mode.to_string(),
            m,
            kappa,
            train_asr: crafted.train_asr,
            test_asr: report.test_asr,
            mean_snr: report.mean_snr,
            mean_l_db: report.mean_l_db,
            converged: crafted.converged,
            iterations: crafted.iterations,
        }
    }
}

pub fn write_sweep<W: Write>(rows: &[SweepRow], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r)?;
    }
    out.flush().map_err(|e| Error::io("<csv>", e))
}

pub fn read_sweep<R: Read>(r: R) -> Result<Vec<SweepRow>> {
    csv::Reader::from_reader(r)
        .deserialize()
        .map(|r| r.map_err(Error::from))
        .collect()
}

/// Penalty crafting once per confidence value.
pub fn sweep_confidence(
    model: &Model,
    train: &[LabeledSample],
    test: &[LabeledSample],
    kappas: &[f64],
    base: &PenaltyConfig,
) -> Result<Vec<(SweepRow, EvalReport)>> {
    if kappas.is_empty() {
        return Err(Error::invalid("confidence grid is empty"));
    }
    kappas
        .par_iter()
        .map(|&kappa| {
            let cfg = CraftConfig::Penalty(PenaltyConfig { kappa, ..*base });
            let (crafted, report) = craft_and_evaluate(model, train, test, &cfg)?;
            Ok((
                SweepRow::new(&crafted, &report, train.len(), Some(kappa)),
                report,
            ))
        })
        .collect()
}

/// The grid values not exceeding `n`, in the given order.
pub fn trim_grid(grid: &[usize], n: usize) -> Vec<usize> {
    grid.iter()
        .copied()
        .filter(|m| *m >= 1 && *m <= n)
        .collect()
}

/// Both methods crafted from the first `m` samples of one seeded shuffle of
/// `train`, for every `m` in the grid.
pub fn sweep_datacount(
    model: &Model,
    train: &[LabeledSample],
    test: &[LabeledSample],
    ms: &[usize],
    greedy: &GreedyConfig,
    penalty: &PenaltyConfig,
    seed: u64,
) -> Result<Vec<(SweepRow, EvalReport)>> {
    if ms.is_empty() {
        return Err(Error::invalid("data-count grid is empty"));
    }
    if let Some(m) = ms.iter().find(|m| **m == 0 || **m > train.len()) {
        return Err(Error::invalid(format!(
            "data count {m} outside 1..={}",
            train.len()
        )));
    }
    let mut order: Vec<usize> = (0..train.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let shuffled: Vec<LabeledSample> = order.iter().map(|&i| train[i].clone()).collect();
    let cells: Vec<(usize, CraftConfig)> = ms
        .iter()
        .flat_map(|&m| {
            [
                (m, CraftConfig::Greedy(*greedy)),
                (m, CraftConfig::Penalty(*penalty)),
            ]
        })
        .collect();
    cells
        .par_iter()
        .map(|(m, cfg)| {
            let (crafted, report) = craft_and_evaluate(model, &shuffled[..*m], test, cfg)?;
            let kappa = match cfg {
                CraftConfig::Penalty(p) => Some(p.kappa),
                CraftConfig::Greedy(_) => None,
            };
            Ok((SweepRow::new(&crafted, &report, *m, kappa), report))
        })
        .collect()
}

/// Settings for crafting from one sample: `c = 0.2`, `kappa = 90`, 19 steps.
pub fn single_sample_config(mode: AttackMode) -> PenaltyConfig {
    PenaltyConfig {
        c: 0.2,
        kappa: 90.0,
        batch_size: 1,
        max_iterations: 19,
        ..PenaltyConfig::new(mode)
    }
}

/// The first sample of each class in a seeded shuffle of `data`, ordered by
/// class.
pub fn one_per_class(data: &[LabeledSample], seed: u64) -> Vec<LabeledSample> {
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut picked: Vec<LabeledSample> = Vec::new();
    for i in order {
        if !picked.iter().any(|p| p.label == data[i].label) {
            picked.push(data[i].clone());
        }
    }
    picked.sort_by_key(|p| p.label);
    picked
}

/// One penalty perturbation per class sample, each evaluated on `test`.
pub fn single_sample_attack(
    model: &Model,
    per_class: &[LabeledSample],
    test: &[LabeledSample],
    cfg: &PenaltyConfig,
) -> Result<Vec<EvalReport>> {
    if per_class.is_empty() {
        return Err(Error::invalid("no class samples given"));
    }
    for (i, s) in per_class.iter().enumerate() {
        if per_class[..i].iter().any(|p| p.label == s.label) {
            return Err(Error::invalid(format!(
                "class {} appears more than once",
                s.label
            )));
        }
    }
    let cfg = CraftConfig::Penalty(PenaltyConfig {
        batch_size: 1,
        ..*cfg
    });
    per_class
        .par_iter()
        .map(|s| craft_and_evaluate(model, std::slice::from_ref(s), test, &cfg).map(|(_, r)| r))
        .collect()
}

/// Writes `value` as pretty JSON followed by a newline.
pub fn write_json<T: Serialize>(value: &T, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n")
        .map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Split;
    use crate::perturbation::CraftInfo;

    fn linear_set() -> (Model, Vec<LabeledSample>) {
        let model = Model::linear_binary(&[1.0, -1.0], 0.0).unwrap();
        let xs = [[0.6, 0.5], [0.7, 0.5], [0.9, 0.5], [0.2, 0.5], [0.55, 0.5]]
            .iter()
            .enumerate()
            .map(|(i, x)| LabeledSample {
                id: format!("s{i}"),
                sample: AudioSample::with_label(x.to_vec(), 0).unwrap(),
                label: 0,
                split: Split::Test,
            })
            .collect();
        (model, xs)
    }

    #[test]
    fn zero_perturbation_has_no_success() {
        let (model, xs) = linear_set();
        let p =
            Perturbation::additive(vec![0.0, 0.0], AttackMode::Untargeted, CraftInfo::default());
        let r = evaluate_uap(&model, &xs, &p, AttackMode::Untargeted).unwrap();
        assert_eq!(r.test_asr, 0.0);
        assert_eq!(r.rows.len(), xs.len());
        assert!(r.rows.iter().all(|row| row.l_db.is_none()));
        assert_eq!(r.mean_l_db, None);
    }

    #[test]
    fn constant_offset_counts_crossings() {
        let (model, xs) = linear_set();
        // v0 - v1 = -0.3 flips every sample with margin x0 - x1 < 0.3
        let p = Perturbation::additive(
            vec![-0.15, 0.15],
            AttackMode::Untargeted,
            CraftInfo::default(),
        );
        let r = evaluate_uap(&model, &xs, &p, AttackMode::Untargeted).unwrap();
        let expected = xs
            .iter()
            .filter(|s| {
                let x = s.sample.samples();
                let clean = x[0] - x[1] > 0.0;
                let after = (x[0] - 0.15).clamp(0.0, 1.0) - (x[1] + 0.15).clamp(0.0, 1.0) > 0.0;
                clean != after
            })
            .count() as f64
            / xs.len() as f64;
        assert_eq!(r.test_asr, expected);
        assert_eq!(r.recount(), r.test_asr);
        assert!(expected > 0.0 && expected < 1.0);
    }

    #[test]
    fn rows_csv_round_trips() {
        let (model, xs) = linear_set();
        let p = Perturbation::additive(
            vec![-0.123456789, 0.1],
            AttackMode::Untargeted,
            CraftInfo::default(),
        );
        let r = evaluate_uap(&model, &xs, &p, AttackMode::Untargeted).unwrap();
        let mut a = Vec::new();
        r.write_rows_csv(&mut a).unwrap();
        let rows = read_rows(a.as_slice()).unwrap();
        assert_eq!(rows, r.rows);
        let mut b = Vec::new();
        write_rows(&rows, &mut b).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn transfer_needs_two_models() {
        let (model, xs) = linear_set();
        let p =
            Perturbation::additive(vec![0.0, 0.0], AttackMode::Untargeted, CraftInfo::default());
        assert!(transfer_matrix(
            &[("a".into(), model.clone())],
            std::slice::from_ref(&p),
            &xs,
            AttackMode::Untargeted
        )
        .is_err());
        let models = vec![("a".to_string(), model.clone()), ("b".to_string(), model)];
        let t = transfer_matrix(&models, &[p.clone(), p], &xs, AttackMode::Untargeted).unwrap();
        assert_eq!(t.asr, vec![vec![None, Some(0.0)], vec![Some(0.0), None]]);
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        assert_eq!(TransferMatrix::read_csv(buf.as_slice()).unwrap(), t);
    }

    #[test]
    fn grid_trimming_and_class_picks() {
        assert_eq!(trim_grid(&DEFAULT_M_GRID, 60), vec![1, 5, 10, 50]);
        let (_, mut xs) = linear_set();
        xs[3].label = 1;
        let picks = one_per_class(&xs, 4);
        assert_eq!(
            picks.iter().map(|p| p.label).collect::<Vec<_>>(),
            vec![0, 1]
        );
        assert_eq!(picks[1].id, "s3");
    }
}
