//! Config-driven experiment runner behind the `lantk` binary.
//!
//! Each runner is a plain function returning a serializable report so the
//! same code paths serve the binary and the test suites.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::activation::Activation;
use crate::dataset::{self, Dataset, PairMode};
use crate::elasticity::{self, ElasticityReport, SimilarityGrid};
use crate::error::{LantkError, Result};
use crate::hoeffding::{self, LabelLaw};
use crate::hr::{self, OracleModel, PairTarget, Variant, ZModel, ZModelFile};
use crate::kernel::{KernelMatrix, Provenance};
use crate::kernels_analytic::{self, McConfig};
use crate::linalg::rows_of;
use crate::matfile;
use crate::net2::TwoLayerNet;
use crate::nth::{self, NthConfig, NthModel, Probes};
use crate::regress::{self, KernelRegressor};
use crate::rng;
use crate::synth::{self, SyntheticSpec};

// ---------------------------------------------------------------------------
// Configuration

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "kebab-case")]
pub enum DataSpec {
    Csv { path: PathBuf, label_column: String },
    Synthetic { spec: SyntheticSpec },
}

impl Default for DataSpec {
    fn default() -> Self {
        DataSpec::Synthetic {
            spec: SyntheticSpec::Clusters {
                classes: 2,
                per_class: 50,
                dim: 5,
                center_norm: 2.0,
                noise: 1.0,
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    KrV1,
    KrV2,
    FjltV1,
    FjltV2,
    Oracle,
}

impl Estimator {
    pub fn name(self) -> &'static str {
        match self {
            Estimator::KrV1 => "kr_v1",
            Estimator::KrV2 => "kr_v2",
            Estimator::FjltV1 => "fjlt_v1",
            Estimator::FjltV2 => "fjlt_v2",
            Estimator::Oracle => "oracle",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum KernelSpec {
    Agnostic,
    Hr {
        estimator: Estimator,
        /// None selects λ on the validation split.
        #[serde(default)]
        lambda: Option<f64>,
    },
    Nth,
    NetInit,
    NetTrained,
}

impl KernelSpec {
    pub fn name(&self) -> String {
        match self {
            KernelSpec::Agnostic => "agnostic".into(),
            KernelSpec::Hr { estimator, .. } => format!("hr-{}", estimator.name()),
            KernelSpec::Nth => "nth".into(),
            KernelSpec::NetInit => "net-init".into(),
            KernelSpec::NetTrained => "net-trained".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitSpec {
    pub val_frac: f64,
    pub test_frac: f64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            val_frac: 0.2,
            test_frac: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HrSettings {
    pub lambda_grid: Vec<f64>,
    pub sketch_dim: usize,
    pub fjlt_ridge: f64,
    pub eigen_floor: f64,
}

impl Default for HrSettings {
    fn default() -> Self {
        HrSettings {
            lambda_grid: hr::LAMBDA_GRID.to_vec(),
            sketch_dim: 4096,
            fjlt_ridge: 1e-3,
            eigen_floor: nth::DEFAULT_FLOOR,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NthSettings {
    pub mc_samples: usize,
    pub width: f64,
    /// Number of held-out points whose pairs are probed by `nth-probe`.
    pub probe_points: usize,
    pub cache: bool,
}

impl Default for NthSettings {
    fn default() -> Self {
        NthSettings {
            mc_samples: McConfig::default().samples,
            width: 1.0,
            probe_points: 6,
            cache: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetSettings {
    pub width: usize,
    pub activation: Activation,
    pub steps: usize,
    pub step_size: f64,
}

impl Default for NetSettings {
    fn default() -> Self {
        NetSettings {
            width: 512,
            activation: Activation::Relu,
            steps: 500,
            step_size: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ElasticitySettings {
    pub pair_cap: usize,
    pub modes: Vec<PairMode>,
    /// λ for label-aware sources that do not fix one.
    pub lambda: f64,
}

impl Default for ElasticitySettings {
    fn default() -> Self {
        ElasticitySettings {
            pair_cap: dataset::DEFAULT_PAIR_CAP,
            modes: vec![PairMode::TrainTrain, PairMode::TestTrain],
            lambda: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Claim1Settings {
    pub n: usize,
    pub center: f64,
    pub noise: f64,
    pub lambda: f64,
}

impl Default for Claim1Settings {
    fn default() -> Self {
        Claim1Settings {
            n: 400,
            center: 2.0,
            noise: 0.6,
            lambda: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HoeffdingSettings {
    pub sizes: Vec<usize>,
    pub trials: usize,
    pub tolerance: f64,
}

impl Default for HoeffdingSettings {
    fn default() -> Self {
        HoeffdingSettings {
            sizes: vec![2, 3, 4],
            trials: 100,
            tolerance: 1e-10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: Option<String>,
    pub data: DataSpec,
    /// Scale every example to unit norm before use.
    pub normalize: bool,
    /// Restrict to (positive, negative) classes for a binary task.
    pub classes: Option<(usize, usize)>,
    pub split: SplitSpec,
    pub kernels: Vec<KernelSpec>,
    pub ridge: Option<f64>,
    pub seed: u64,
    pub hr: HrSettings,
    pub nth: NthSettings,
    pub net: NetSettings,
    pub elasticity: ElasticitySettings,
    pub claim1: Claim1Settings,
    pub hoeffding: HoeffdingSettings,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            task: None,
            data: DataSpec::default(),
            normalize: false,
            classes: None,
            split: SplitSpec::default(),
            kernels: vec![
                KernelSpec::Agnostic,
                KernelSpec::Hr {
                    estimator: Estimator::FjltV1,
                    lambda: None,
                },
            ],
            ridge: None,
            seed: 0,
            hr: HrSettings::default(),
            nth: NthSettings::default(),
            net: NetSettings::default(),
            elasticity: ElasticitySettings::default(),
            claim1: Claim1Settings::default(),
            hoeffding: HoeffdingSettings::default(),
        }
    }
}

// ---------------------------------------------------------------------------
// Data preparation

/// Labels in the form the kernels and regressors consume.
#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    Binary(DVector<f64>),
    Multiclass { labels: Vec<usize>, classes: usize },
}

impl Targets {
    pub fn of(ds: &Dataset) -> Self {
        if ds.class_count == 2 {
            Targets::Binary(DVector::from_iterator(
                ds.n(),
                ds.labels.iter().map(|&l| if l == 1 { 1.0 } else { -1.0 }),
            ))
        } else {
            Targets::Multiclass {
                labels: ds.labels.clone(),
                classes: ds.class_count,
            }
        }
    }

    pub fn pair_target(&self) -> PairTarget {
        match self {
            Targets::Binary(y) => PairTarget::Binary(y.clone()),
            Targets::Multiclass { labels, .. } => PairTarget::Multiclass(labels.clone()),
        }
    }

    pub fn regression_matrix(&self) -> DMatrix<f64> {
        match self {
            Targets::Binary(y) => DMatrix::from_column_slice(y.len(), 1, y.as_slice()),
            Targets::Multiclass { labels, classes } => {
                let mut t = DMatrix::zeros(labels.len(), *classes);
                for (i, &l) in labels.iter().enumerate() {
                    t[(i, l)] = 1.0;
                }
                t
            }
        }
    }

    /// Per-point label as stored by the oracle estimator.
    pub fn oracle_labels(&self) -> Vec<f64> {
        match self {
            Targets::Binary(y) => y.iter().copied().collect(),
            Targets::Multiclass { labels, .. } => labels.iter().map(|&l| l as f64).collect(),
        }
    }

    pub fn is_multiclass(&self) -> bool {
        matches!(self, Targets::Multiclass { .. })
    }

    pub fn binary(&self) -> Result<&DVector<f64>> {
        match self {
            Targets::Binary(y) => Ok(y),
            Targets::Multiclass { .. } => Err(LantkError::Unsupported("this kernel needs a binary task".into())),
        }
    }

    /// Accuracy of regression scores against these targets.
    pub fn accuracy(&self, scores: &DMatrix<f64>) -> Result<f64> {
        match self {
            Targets::Binary(y) => {
                let truth: Vec<f64> = y.iter().copied().collect();
                regress::accuracy(&regress::sign_labels(scores), &truth)
            }
            Targets::Multiclass { labels, .. } => regress::accuracy(&regress::argmax_labels(scores), labels),
        }
    }
}

pub fn load_dataset(cfg: &ExperimentConfig, seed: u64) -> Result<Dataset> {
    let mut ds = match &cfg.data {
        DataSpec::Csv { path, label_column } => dataset::load_csv(path, label_column)?,
        DataSpec::Synthetic { spec } => spec.generate(rng::derive_seed(seed, "data"))?,
    };
    if let Some((pos, neg)) = cfg.classes {
        let view = ds.binary_view(pos, neg)?;
        let labels = view.class_labels();
        ds = Dataset::new(view.x, labels, 2)?;
    }
    if ds.class_count < 2 {
        return Err(LantkError::invalid("experiments need at least two classes"));
    }
    if cfg.normalize {
        ds = ds.l2_normalized();
    }
    Ok(ds)
}

#[derive(Debug, Clone)]
pub struct Splits {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

pub fn split(cfg: &ExperimentConfig, ds: &Dataset, seed: u64) -> Result<Splits> {
    let (train, val, test) = dataset::stratified_split(
        ds,
        cfg.split.val_frac,
        cfg.split.test_frac,
        rng::derive_seed(seed, "split"),
    )?;
    Ok(Splits { train, val, test })
}

// ---------------------------------------------------------------------------
// Kernel construction

/// A kernel that can be evaluated between arbitrary point sets.
pub enum BuiltKernel {
    Agnostic,
    Hr { z: ZModel, lambda: f64 },
    Nth(Box<NthModel>),
    Net(TwoLayerNet),
}

impl BuiltKernel {
    pub fn cross(&self, a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        match self {
            BuiltKernel::Agnostic => kernels_analytic::expected_k2_cross(a, b),
            BuiltKernel::Hr { z, lambda } => {
                let k2 = kernels_analytic::expected_k2_cross(a, b)?;
                Ok(k2 + hr::z_matrix_cross(z, a, b)? * *lambda)
            }
            BuiltKernel::Nth(m) => {
                let (ra, rb) = (rows_of(a), rows_of(b));
                let mut k = DMatrix::zeros(ra.len(), rb.len());
                for (i, x) in ra.iter().enumerate() {
                    for (j, x2) in rb.iter().enumerate() {
                        k[(i, j)] = m.evaluate(x, x2)?.value;
                    }
                }
                Ok(k)
            }
            BuiltKernel::Net(net) => net.empirical_k2_cross(a, b),
        }
    }

    /// Symmetric train matrix (mirrored where the kernel is evaluated per pair).
    pub fn square(&self, a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        match self {
            BuiltKernel::Agnostic => Ok(kernels_analytic::expected_k2_matrix(a)?.values),
            BuiltKernel::Hr { z, lambda } => {
                let k2 = kernels_analytic::expected_k2_matrix(a)?.values;
                if *lambda == 0.0 {
                    return Ok(k2);
                }
                Ok(k2 + hr::z_matrix_train(z, a)? * *lambda)
            }
            BuiltKernel::Nth(m) => {
                let rows = rows_of(a);
                let n = rows.len();
                let mut k = DMatrix::zeros(n, n);
                for i in 0..n {
                    for j in i..n {
                        let v = m.evaluate(&rows[i], &rows[j])?.value;
                        k[(i, j)] = v;
                        k[(j, i)] = v;
                    }
                }
                Ok(k)
            }
            BuiltKernel::Net(net) => Ok(net.empirical_k2(a)?.values),
        }
    }

    pub fn diag(&self, a: &DMatrix<f64>) -> Result<Vec<f64>> {
        (0..a.nrows())
            .map(|i| {
                let r = a.rows(i, 1).into_owned();
                Ok(self.cross(&r, &r)?[(0, 0)])
            })
            .collect()
    }
}

/// Pair-label estimator fitted on the training split. The oracle also gets
/// the labels of `extra` point sets.
pub fn fit_z(
    estimator: Estimator,
    x: &DMatrix<f64>,
    targets: &Targets,
    settings: &HrSettings,
    seed: u64,
    extra: &[(&DMatrix<f64>, &Targets)],
) -> Result<ZModel> {
    let pt = targets.pair_target();
    Ok(match estimator {
        Estimator::KrV1 | Estimator::KrV2 => {
            let v = if estimator == Estimator::KrV1 {
                Variant::V1
            } else {
                Variant::V2
            };
            ZModel::Kr(hr::fit_kr(x, &pt, v, settings.eigen_floor)?)
        }
        Estimator::FjltV1 | Estimator::FjltV2 => {
            let v = if estimator == Estimator::FjltV1 {
                Variant::V1
            } else {
                Variant::V2
            };
            ZModel::Fjlt(hr::fit_z_fjlt(
                x,
                &pt,
                v,
                settings.sketch_dim,
                settings.fjlt_ridge,
                rng::derive_seed(seed, "fjlt-fit"),
            )?)
        }
        Estimator::Oracle => {
            let mut o = OracleModel::new(targets.is_multiclass(), Vec::new());
            o.extend(x, &targets.oracle_labels());
            for (xe, te) in extra {
                o.extend(xe, &te.oracle_labels());
            }
            ZModel::Oracle(o)
        }
    })
}

fn train_net(
    cfg: &ExperimentConfig,
    x: &DMatrix<f64>,
    targets: &Targets,
    seed: u64,
    trained: bool,
) -> Result<TwoLayerNet> {
    let y = targets.binary()?;
    let mut net = TwoLayerNet::gaussian(
        x.ncols(),
        cfg.net.width,
        cfg.net.activation,
        rng::derive_seed(seed, "net-init"),
    )?;
    if trained {
        net.train_targets(x, y, cfg.net.step_size, cfg.net.steps, 0, false)?;
    }
    Ok(net)
}

fn nth_config(cfg: &ExperimentConfig, seed: u64, out: Option<&Path>, override_guardrail: bool) -> NthConfig {
    NthConfig {
        mc: McConfig {
            samples: cfg.nth.mc_samples,
            seed: rng::derive_seed(seed, "nth-mc"),
        },
        width: cfg.nth.width,
        cache_dir: if cfg.nth.cache {
            out.map(|o| o.join("cache"))
        } else {
            None
        },
        override_guardrail,
        ..NthConfig::default()
    }
}

/// Build a kernel for evaluation; `lambda` is used by label-aware specs
/// without their own λ.
#[allow(clippy::too_many_arguments)]
pub fn build_kernel(
    cfg: &ExperimentConfig,
    spec: &KernelSpec,
    x: &DMatrix<f64>,
    targets: &Targets,
    seed: u64,
    lambda: f64,
    extra: &[(&DMatrix<f64>, &Targets)],
    out: Option<&Path>,
    override_guardrail: bool,
) -> Result<BuiltKernel> {
    Ok(match spec {
        KernelSpec::Agnostic => BuiltKernel::Agnostic,
        KernelSpec::Hr { estimator, lambda: l } => BuiltKernel::Hr {
            z: fit_z(*estimator, x, targets, &cfg.hr, seed, extra)?,
            lambda: l.unwrap_or(lambda),
        },
        KernelSpec::Nth => {
            let n = x.nrows();
            if n > nth::GRID_GUARDRAIL_N && !override_guardrail {
                return Err(LantkError::Guardrail(format!(
                    "label-aware hierarchy kernel with n = {n} > {} costs at least O(n^4) \
                     Monte-Carlo integrals; pass --override-n-guardrail to proceed",
                    nth::GRID_GUARDRAIL_N
                )));
            }
            let y = targets.binary()?;
            BuiltKernel::Nth(Box::new(NthModel::fit(
                x,
                y,
                &nth_config(cfg, seed, out, override_guardrail),
            )?))
        }
        KernelSpec::NetInit => BuiltKernel::Net(train_net(cfg, x, targets, seed, false)?),
        KernelSpec::NetTrained => BuiltKernel::Net(train_net(cfg, x, targets, seed, true)?),
    })
}

// ---------------------------------------------------------------------------
// kernel

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelOutput {
    pub name: String,
    pub path: PathBuf,
    pub rows: usize,
}

/// Train matrices for every configured kernel over the whole dataset.
pub fn run_kernel(
    cfg: &ExperimentConfig,
    seed: u64,
    out: &Path,
    override_guardrail: bool,
) -> Result<Vec<KernelOutput>> {
    let ds = load_dataset(cfg, seed)?;
    let targets = Targets::of(&ds);
    let mut outputs = Vec::new();
    for spec in &cfg.kernels {
        let name = spec.name();
        let km = match spec {
            KernelSpec::Nth => {
                let y = targets.binary()?;
                nth::lantk_nth(
                    &ds.features,
                    y,
                    &Probes::Grid,
                    &nth_config(cfg, seed, Some(out), override_guardrail),
                )?
                .kernel
            }
            _ => {
                let lambda = match spec {
                    KernelSpec::Hr { lambda, .. } => lambda
                        .ok_or_else(|| LantkError::invalid("hr kernels built by `kernel` need an explicit lambda"))?,
                    _ => 0.0,
                };
                let k = build_kernel(
                    cfg,
                    spec,
                    &ds.features,
                    &targets,
                    seed,
                    lambda,
                    &[],
                    Some(out),
                    override_guardrail,
                )?;
                KernelMatrix::new(
                    k.square(&ds.features)?,
                    Provenance::new(name.clone(), serde_json::json!({"spec": spec, "seed": seed})),
                )
            }
        };
        let path = out.join(format!("{name}.lantkmat"));
        km.save(&path)?;
        if let (KernelSpec::Hr { lambda: Some(l), .. }, BuiltKernel::Hr { z, .. }) = (
            spec,
            build_kernel(cfg, spec, &ds.features, &targets, seed, 0.0, &[], None, false)?,
        ) {
            matfile::write_json(
                &out.join(format!("{name}.zmodel.json")),
                &ZModelFile {
                    model: z,
                    lambda: *l,
                    clipped: true,
                },
            )?;
        }
        outputs.push(KernelOutput {
            name,
            path,
            rows: km.values.nrows(),
        });
    }
    Ok(outputs)
}

// ---------------------------------------------------------------------------
// benchmark

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRow {
    pub kernel: String,
    pub lambda: Option<f64>,
    pub val_accuracy: Option<f64>,
    pub test_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub task: String,
    pub classes: usize,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub seed: u64,
    pub rows: Vec<BenchmarkRow>,
}

impl BenchmarkReport {
    pub fn row(&self, kernel: &str) -> Option<&BenchmarkRow> {
        self.rows.iter().find(|r| r.kernel == kernel)
    }
}

fn fit_and_score(
    k_train: &DMatrix<f64>,
    cross: &DMatrix<f64>,
    train_t: &Targets,
    eval_t: &Targets,
    ridge: Option<f64>,
) -> Result<f64> {
    let m = KernelRegressor::fit(k_train, &train_t.regression_matrix(), ridge)?;
    eval_t.accuracy(&m.predict(cross)?)
}

pub fn run_benchmark(
    cfg: &ExperimentConfig,
    seed: u64,
    out: Option<&Path>,
    override_guardrail: bool,
) -> Result<BenchmarkReport> {
    let ds = load_dataset(cfg, seed)?;
    let s = split(cfg, &ds, seed)?;
    let (tt, vt, et) = (Targets::of(&s.train), Targets::of(&s.val), Targets::of(&s.test));
    let (xt, xv, xe) = (&s.train.features, &s.val.features, &s.test.features);
    let has_val = s.val.n() > 0;
    let mut rows = Vec::new();
    for spec in &cfg.kernels {
        let name = spec.name();
        match spec {
            KernelSpec::Hr { estimator, lambda } => {
                let z = fit_z(*estimator, xt, &tt, &cfg.hr, seed, &[(xv, &vt), (xe, &et)])?;
                if let Some(dir) = out {
                    matfile::write_json(
                        &dir.join(format!("{name}.zmodel.json")),
                        &ZModelFile {
                            model: z.clone(),
                            lambda: lambda.unwrap_or(f64::NAN),
                            clipped: true,
                        },
                    )?;
                }
                let k2 = kernels_analytic::expected_k2_matrix(xt)?.values;
                let z_train = hr::z_matrix_train(&z, xt)?;
                let k2_test = kernels_analytic::expected_k2_cross(xe, xt)?;
                let z_test = hr::z_matrix_cross(&z, xe, xt)?;
                let (lam, val_acc) = match lambda {
                    Some(l) => (*l, None),
                    None => {
                        if !has_val {
                            return Err(LantkError::invalid("λ selection needs a validation split"));
                        }
                        let k2_val = kernels_analytic::expected_k2_cross(xv, xt)?;
                        let z_val = hr::z_matrix_cross(&z, xv, xt)?;
                        // Z is not PSD, so large λ can leave K2 + λZ indefinite;
                        // such grid points are skipped rather than regularized away.
                        let mut best: Option<(f64, f64)> = None;
                        for &l in &cfg.hr.lambda_grid {
                            let acc = match fit_and_score(
                                &(&k2 + &z_train * l),
                                &(&k2_val + &z_val * l),
                                &tt,
                                &vt,
                                cfg.ridge,
                            ) {
                                Ok(a) => a,
                                Err(LantkError::Numerical(_)) => continue,
                                Err(e) => return Err(e),
                            };
                            if best.map_or(true, |b| acc > b.1) {
                                best = Some((l, acc));
                            }
                        }
                        let (l, acc) = best.ok_or_else(|| {
                            LantkError::numerical(format!(
                                "{name}: K2 + λZ is not positive definite for any λ in the grid"
                            ))
                        })?;
                        (l, Some(acc))
                    }
                };
                let test = fit_and_score(
                    &(&k2 + &z_train * lam),
                    &(&k2_test + &z_test * lam),
                    &tt,
                    &et,
                    cfg.ridge,
                )?;
                rows.push(BenchmarkRow {
                    kernel: name,
                    lambda: Some(lam),
                    val_accuracy: val_acc,
                    test_accuracy: test,
                });
            }
            _ => {
                let k = build_kernel(cfg, spec, xt, &tt, seed, 0.0, &[], out, override_guardrail)?;
                let kt = k.square(xt)?;
                let val = if has_val {
                    Some(fit_and_score(&kt, &k.cross(xv, xt)?, &tt, &vt, cfg.ridge)?)
                } else {
                    None
                };
                let test = fit_and_score(&kt, &k.cross(xe, xt)?, &tt, &et, cfg.ridge)?;
                rows.push(BenchmarkRow {
                    kernel: name,
                    lambda: None,
                    val_accuracy: val,
                    test_accuracy: test,
                });
            }
        }
    }
    Ok(BenchmarkReport {
        task: if tt.is_multiclass() { "multiclass" } else { "binary" }.into(),
        classes: ds.class_count,
        n_train: s.train.n(),
        n_val: s.val.n(),
        n_test: s.test.n(),
        seed,
        rows,
    })
}

// ---------------------------------------------------------------------------
// claim1-demo

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Claim1Report {
    pub n_train: usize,
    pub n_test: usize,
    pub seed: u64,
    /// Fixed linear kernel on the half-plane labels.
    pub eta1_linear_accuracy: f64,
    /// Fixed linear kernel on the quadrant-parity relabelling.
    pub eta2_linear_accuracy: f64,
    /// Linear kernel plus λ·y yᵀ (oracle label products) on the relabelling.
    pub eta2_oracle_hr_accuracy: f64,
    pub lambda: f64,
}

pub fn run_claim1(settings: &Claim1Settings, ridge: Option<f64>, seed: u64) -> Result<Claim1Report> {
    if settings.n < 40 {
        return Err(LantkError::invalid("the relabelling demo needs n >= 40"));
    }
    let (x, eta1, eta2) = synth::quadrant_blobs(
        settings.n,
        settings.center,
        settings.noise,
        rng::derive_seed(seed, "claim1"),
    );
    let half = settings.n / 2;
    let xt = x.rows(0, half).into_owned();
    let xe = x.rows(half, settings.n - half).into_owned();
    let k = &xt * xt.transpose();
    let kc = &xe * xt.transpose();
    let acc = |labels: &[f64], k: &DMatrix<f64>, kc: &DMatrix<f64>| -> Result<f64> {
        let y = DVector::from_row_slice(&labels[..half]);
        let m = KernelRegressor::fit_binary(k, &y, ridge)?;
        regress::accuracy(&regress::sign_labels(&m.predict(kc)?), &labels[half..])
    };
    let z_train = DMatrix::from_fn(half, half, |i, j| eta2[i] * eta2[j]);
    let z_cross = DMatrix::from_fn(settings.n - half, half, |i, j| eta2[half + i] * eta2[j]);
    Ok(Claim1Report {
        n_train: half,
        n_test: settings.n - half,
        seed,
        eta1_linear_accuracy: acc(&eta1, &k, &kc)?,
        eta2_linear_accuracy: acc(&eta2, &k, &kc)?,
        eta2_oracle_hr_accuracy: acc(
            &eta2,
            &(&k + z_train * settings.lambda),
            &(&kc + z_cross * settings.lambda),
        )?,
        lambda: settings.lambda,
    })
}

// ---------------------------------------------------------------------------
// elasticity

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedElasticity {
    pub kernel: String,
    pub report: ElasticityReport,
}

pub fn run_elasticity(
    cfg: &ExperimentConfig,
    seed: u64,
    out: Option<&Path>,
    override_guardrail: bool,
) -> Result<Vec<NamedElasticity>> {
    let ds = load_dataset(cfg, seed)?;
    let s = split(cfg, &ds, seed)?;
    let (tt, et) = (Targets::of(&s.train), Targets::of(&s.test));
    let (xt, xe) = (&s.train.features, &s.test.features);
    let mut reports = Vec::new();
    for spec in &cfg.kernels {
        let name = spec.name();
        let k = build_kernel(
            cfg,
            spec,
            xt,
            &tt,
            seed,
            cfg.elasticity.lambda,
            &[(xe, &et)],
            out,
            override_guardrail,
        )?;
        let prov = Provenance::new(name.clone(), serde_json::json!({"spec": spec, "seed": seed}));
        let kt = k.square(xt)?;
        for &mode in &cfg.elasticity.modes {
            let (grid, pairs) = match mode {
                PairMode::TrainTrain => (
                    SimilarityGrid::square(&KernelMatrix::new(kt.clone(), prov.clone()))?,
                    dataset::enumerate_pairs(
                        &s.train.labels,
                        cfg.elasticity.pair_cap,
                        rng::derive_seed(seed, "pairs"),
                    )?,
                ),
                PairMode::TestTrain => (
                    SimilarityGrid::test_train(
                        k.cross(xe, xt)?,
                        k.diag(xe)?,
                        kt.diagonal().iter().copied().collect(),
                        prov.clone(),
                    )?,
                    dataset::enumerate_pairs_test_train(
                        &s.test.labels,
                        &s.train.labels,
                        cfg.elasticity.pair_cap,
                        rng::derive_seed(seed, "pairs"),
                    )?,
                ),
            };
            let (report, per_pair) = elasticity::relative_ratio_detailed(&grid, &pairs)?;
            if let Some(dir) = out {
                let tag = match mode {
                    PairMode::TrainTrain => "train-train",
                    PairMode::TestTrain => "test-train",
                };
                elasticity::write_pairs_csv(&dir.join(format!("pairs-{name}-{tag}.csv")), &per_pair)?;
            }
            reports.push(NamedElasticity {
                kernel: name.clone(),
                report,
            });
        }
    }
    Ok(reports)
}

// ---------------------------------------------------------------------------
// nth-probe

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub i: usize,
    pub j: usize,
    pub intra: bool,
    pub agnostic: f64,
    pub label_aware: f64,
    pub flagged_entries: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NthProbeReport {
    pub n_train: usize,
    pub probes: Vec<ProbeResult>,
    pub mean_intra: Option<f64>,
    pub mean_inter: Option<f64>,
}

/// Label-aware component on all pairs of the first `probe_points` held-out
/// points, with the training split as the hierarchy's data.
pub fn run_nth_probe(
    cfg: &ExperimentConfig,
    seed: u64,
    out: Option<&Path>,
    override_guardrail: bool,
) -> Result<NthProbeReport> {
    let ds = load_dataset(cfg, seed)?;
    let s = split(cfg, &ds, seed)?;
    let tt = Targets::of(&s.train);
    let y = tt.binary()?;
    let n = s.train.n();
    if n > nth::GRID_GUARDRAIL_N && !override_guardrail {
        return Err(LantkError::Guardrail(format!(
            "probing with n = {n} > {} training points costs O(n^2) Monte-Carlo integrals per probe; \
             pass --override-n-guardrail to proceed",
            nth::GRID_GUARDRAIL_N
        )));
    }
    let model = NthModel::fit(&s.train.features, y, &nth_config(cfg, seed, out, override_guardrail))?;
    let pool = rows_of(&s.test.features);
    let k = cfg.nth.probe_points.min(pool.len());
    if k < 2 {
        return Err(LantkError::invalid("nth-probe needs at least two held-out points"));
    }
    let mut probes = Vec::new();
    for i in 0..k {
        for j in (i + 1)..k {
            let v = model.evaluate(&pool[i], &pool[j])?;
            probes.push(ProbeResult {
                i,
                j,
                intra: s.test.labels[i] == s.test.labels[j],
                agnostic: v.agnostic,
                label_aware: v.label_aware,
                flagged_entries: v.flagged_entries,
            });
        }
    }
    let mean = |intra: bool| {
        let v: Vec<f64> = probes
            .iter()
            .filter(|p| p.intra == intra)
            .map(|p| p.label_aware)
            .collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    };
    Ok(NthProbeReport {
        n_train: n,
        mean_intra: mean(true),
        mean_inter: mean(false),
        probes,
    })
}

// ---------------------------------------------------------------------------
// hoeffding-check

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HoeffdingSummary {
    pub functions_checked: usize,
    pub worst_reconstruction: f64,
    pub worst_cross_moment: f64,
    pub worst_membership: f64,
    /// Largest component above order 2 of a label-aware kernel entry.
    pub hr_entry_above_order2: f64,
    pub tolerance: f64,
    pub passed: bool,
}

/// Table of one label-aware kernel entry, E K₂(x₀, x₁) + λ Σ ψ_ij y_i y_j,
/// as a function of the n training labels.
pub fn hr_entry_table(x: &DMatrix<f64>, lambda: f64) -> Result<Vec<f64>> {
    let rows = rows_of(x);
    let phi = kernels_analytic::expected_k2_matrix(x)?.values;
    let phi_ab = kernels_analytic::expected_k2(&rows[0], &rows[1])?;
    let psi = hr::psi_weights(&phi, phi_ab)?;
    hoeffding::quadratic_form_table(phi_ab, &(psi * lambda))
}

pub fn run_hoeffding(settings: &HoeffdingSettings, seed: u64) -> Result<HoeffdingSummary> {
    let mut r = rng::substream(seed, "hoeffding");
    let (mut wr, mut wc, mut wm) = (0.0f64, 0.0f64, 0.0f64);
    let mut count = 0;
    for &n in &settings.sizes {
        for _ in 0..settings.trials {
            let p: Vec<f64> = (0..n).map(|_| r.gen_range(0.1..0.9)).collect();
            let law = LabelLaw::product(p)?;
            let f: Vec<f64> = (0..1usize << n).map(|_| r.gen_range(-1.0..1.0)).collect();
            let dec = hoeffding::decompose(&f, &law)?;
            let rep = hoeffding::verify(&f, &law, &dec);
            wr = wr.max(rep.reconstruction_error);
            wc = wc.max(rep.max_cross_moment);
            wm = wm.max(rep.max_membership_residual);
            count += 1;
        }
    }
    let ds = synth::clusters(2, 2, 3, 1.5, 1.0, rng::derive_seed(seed, "hoeffding-hr"))?;
    let table = hr_entry_table(&ds.features, 1.0)?;
    let dec = hoeffding::decompose(&table, &LabelLaw::uniform(ds.n())?)?;
    let above = dec.max_above_order(2);
    let tol = settings.tolerance;
    Ok(HoeffdingSummary {
        functions_checked: count,
        worst_reconstruction: wr,
        worst_cross_moment: wc,
        worst_membership: wm,
        hr_entry_above_order2: above,
        tolerance: tol,
        passed: wr <= tol && wc <= tol && wm <= tol && above <= tol,
    })
}

// ---------------------------------------------------------------------------
// selftest

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteResult {
    pub suite: String,
    pub passed: bool,
    pub detail: String,
}

/// Adaptive Simpson on [a, b].
pub fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    #[allow(clippy::too_many_arguments)]
    fn rec(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let diff = left + right - whole;
        if depth == 0 || diff.abs() <= 15.0 * tol {
            left + right + diff / 15.0
        } else {
            rec(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)
                + rec(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
        }
    }
    let (fa, fb, fm) = (f(a), f(b), f(0.5 * (a + b)));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    rec(f, a, b, fa, fm, fb, whole, tol, 40)
}

fn suite_analytic_vs_mc(seed: u64, fault: bool) -> Result<SuiteResult> {
    let x = DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 0.0, 0.6, 0.8, 0.0, -0.3, 0.2, 0.9]);
    let mut ana = kernels_analytic::expected_k2_matrix(&x)?.values;
    if fault {
        ana *= 1.1;
    }
    let inits = 20;
    let mut mean = DMatrix::zeros(3, 3);
    for s in 0..inits {
        let net = TwoLayerNet::gaussian(
            3,
            20_000,
            Activation::Relu,
            rng::derive_seed_idx(seed, "selftest-k2", &[s]),
        )?;
        mean += net.empirical_k2(&x)?.values;
    }
    mean /= inits as f64;
    let err = (&mean - &ana).abs().max();
    Ok(SuiteResult {
        suite: "analytic-vs-mc".into(),
        passed: err < 2e-2,
        detail: format!("max |mean empirical K2 - E K2| = {err:.2e} (tol 2e-2)"),
    })
}

fn suite_prop1(seed: u64) -> Result<SuiteResult> {
    let n = 3;
    let mut r = rng::substream(seed, "selftest-prop1");
    let a = DMatrix::from_fn(n, n, |_, _| r.gen_range(-1.0..1.0));
    let h = &a * a.transpose() + DMatrix::identity(n, n) * 0.5;
    let y = DVector::from_fn(n, |_, _| r.gen_range(-1.0..1.0));
    let k3 = DVector::from_fn(n, |_, _| r.gen_range(-1.0..1.0));
    let k4 = DMatrix::from_fn(n, n, |_, _| r.gen_range(-1.0..1.0));
    let k2 = 0.7;
    let eig = h.clone().symmetric_eigen();
    let nf = n as f64;
    let e = |u: f64| {
        let c = eig.eigenvectors.tr_mul(&y);
        let c = DVector::from_fn(n, |k, _| {
            let l: f64 = eig.eigenvalues[k];
            c[k] * (-u * l / nf).exp()
        });
        &eig.eigenvectors * c
    };
    let lmax = eig.eigenvalues.max();
    let t = nf / lmax;
    let tol = 1e-10;
    let outer = |u: f64| {
        let eu = e(u);
        let inner = |v: f64| eu.dot(&(&k4 * e(v)));
        k3.dot(&eu) / nf + adaptive_simpson(&inner, 0.0, u, tol) / (nf * nf)
    };
    let quad = k2 + adaptive_simpson(&outer, 0.0, t, tol);
    let closed = nth::prop1_kernel(k2, &k3, &k4, &h, &y, t, nth::DEFAULT_FLOOR)?;
    let err = (quad - closed).abs();
    Ok(SuiteResult {
        suite: "prop1-vs-quadrature".into(),
        passed: err < 1e-6,
        detail: format!("|closed form - quadrature| = {err:.2e} (tol 1e-6)"),
    })
}

fn suite_hoeffding(seed: u64) -> Result<SuiteResult> {
    let s = run_hoeffding(
        &HoeffdingSettings {
            sizes: vec![3],
            trials: 10,
            tolerance: 1e-10,
        },
        seed,
    )?;
    Ok(SuiteResult {
        suite: "hoeffding".into(),
        passed: s.passed,
        detail: format!(
            "reconstruction {:.1e}, cross moment {:.1e}, membership {:.1e}",
            s.worst_reconstruction, s.worst_cross_moment, s.worst_membership
        ),
    })
}

fn suite_fwht(seed: u64) -> Result<SuiteResult> {
    let mut r = rng::substream(seed, "selftest-fwht");
    let v: Vec<f64> = (0..64).map(|_| r.gen_range(-1.0..1.0)).collect();
    let mut w = v.clone();
    hr::fwht(&mut w)?;
    let energy = (w.iter().map(|x| x * x).sum::<f64>() - 64.0 * v.iter().map(|x| x * x).sum::<f64>()).abs();
    hr::fwht(&mut w)?;
    let inv = w.iter().zip(&v).map(|(a, b)| (a / 64.0 - b).abs()).fold(0.0, f64::max);
    Ok(SuiteResult {
        suite: "fwht".into(),
        passed: energy < 1e-9 && inv < 1e-12,
        detail: format!("involution error {inv:.1e}, energy error {energy:.1e}"),
    })
}

pub fn run_selftest(seed: u64, fault: Option<&str>) -> Result<Vec<SuiteResult>> {
    Ok(vec![
        suite_analytic_vs_mc(seed, fault == Some("k2"))?,
        suite_prop1(seed)?,
        suite_hoeffding(seed)?,
        suite_fwht(seed)?,
    ])
}

// ---------------------------------------------------------------------------
// Command line

#[derive(Debug, Parser)]
#[command(
    name = "lantk",
    version,
    about = "Label-aware neural tangent kernels: kernels, benchmarks and checks"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Experiment config (JSON); copied verbatim into the output directory.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Root seed; overrides the config's seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "lantk-out")]
    pub out: PathBuf,
    /// Allow label-aware hierarchy kernels on more than 64 training points.
    #[arg(long, global = true)]
    pub override_n_guardrail: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build and save kernel matrices for the configured dataset.
    Kernel,
    /// Kernel regression accuracy of each configured kernel.
    Benchmark,
    /// Fixed linear kernel vs label-aware kernel on a relabelled XOR task.
    Claim1Demo {
        #[arg(long)]
        n: Option<usize>,
    },
    /// Intra/inter relative ratio of each configured kernel.
    Elasticity,
    /// Label-aware hierarchy component on held-out probe pairs.
    NthProbe,
    /// Brute-force Hoeffding decomposition checks.
    HoeffdingCheck,
    /// Oracle-backed invariant suites.
    Selftest {
        #[arg(long, hide = true)]
        inject_fault: Option<String>,
    },
}

fn prepare(cli: &Cli) -> Result<(ExperimentConfig, u64)> {
    std::fs::create_dir_all(&cli.out)?;
    let cfg = match &cli.config {
        Some(p) => {
            let raw = std::fs::read(p)?;
            let cfg: ExperimentConfig = serde_json::from_slice(&raw)?;
            std::fs::write(cli.out.join("config.json"), &raw)?;
            cfg
        }
        None => {
            let cfg = ExperimentConfig::default();
            matfile::write_json(&cli.out.join("config.json"), &cfg)?;
            cfg
        }
    };
    let seed = cli.seed.unwrap_or(cfg.seed);
    Ok((cfg, seed))
}

fn print_json<T: Serialize>(v: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

/// Run one command; returns the process exit code.
pub fn execute(cli: &Cli) -> Result<i32> {
    let (cfg, seed) = prepare(cli)?;
    let out = cli.out.as_path();
    let guard = cli.override_n_guardrail;
    match &cli.command {
        Command::Kernel => {
            let o = run_kernel(&cfg, seed, out, guard)?;
            matfile::write_json(&out.join("kernels.json"), &o)?;
            print_json(&o)?;
        }
        Command::Benchmark => {
            let r = run_benchmark(&cfg, seed, Some(out), guard)?;
            matfile::write_json(&out.join("results.json"), &r)?;
            print_json(&r)?;
        }
        Command::Claim1Demo { n } => {
            let mut s = cfg.claim1.clone();
            if let Some(n) = n {
                s.n = *n;
            }
            let r = run_claim1(&s, cfg.ridge, seed)?;
            matfile::write_json(&out.join("claim1.json"), &r)?;
            print_json(&r)?;
        }
        Command::Elasticity => {
            let r = run_elasticity(&cfg, seed, Some(out), guard)?;
            matfile::write_json(&out.join("elasticity.json"), &r)?;
            print_json(&r)?;
        }
        Command::NthProbe => {
            let r = run_nth_probe(&cfg, seed, Some(out), guard)?;
            matfile::write_json(&out.join("nth-probe.json"), &r)?;
            print_json(&r)?;
        }
        Command::HoeffdingCheck => {
            let r = run_hoeffding(&cfg.hoeffding, seed)?;
            matfile::write_json(&out.join("hoeffding.json"), &r)?;
            print_json(&r)?;
            if !r.passed {
                return Ok(2);
            }
        }
        Command::Selftest { inject_fault } => {
            let r = run_selftest(seed, inject_fault.as_deref())?;
            println!("{:<22} {:<6} detail", "suite", "status");
            for s in &r {
                println!(
                    "{:<22} {:<6} {}",
                    s.suite,
                    if s.passed { "PASS" } else { "FAIL" },
                    s.detail
                );
            }
            matfile::write_json(&out.join("selftest.json"), &r)?;
            if r.iter().any(|s| !s.passed) {
                return Ok(2);
            }
        }
    }
    Ok(0)
}

/// Entry point used by the binary: prints errors and maps them to exit codes.
pub fn main_with(cli: Cli) -> i32 {
    match execute(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_roundtrip_and_defaults() {
        let cfg = ExperimentConfig::default();
        let s = serde_json::to_string(&cfg).unwrap();
        let back: ExperimentConfig = serde_json::from_str(&s).unwrap();
        assert_eq!(back, cfg);
        let partial: ExperimentConfig =
            serde_json::from_str(r#"{"seed": 5, "kernels": [{"kind": "hr", "estimator": "oracle", "lambda": 0.5}]}"#)
                .unwrap();
        assert_eq!(partial.seed, 5);
        assert_eq!(partial.kernels[0].name(), "hr-oracle");
        assert!(serde_json::from_str::<ExperimentConfig>(r#"{"bogus": 1}"#).is_err());
    }

    #[test]
    fn simpson_polynomial() {
        let v = adaptive_simpson(&|x| x * x * x - x, 0.0, 2.0, 1e-12);
        assert!((v - 2.0).abs() < 1e-12);
    }

    #[test]
    fn claim1_small() {
        let r = run_claim1(&Claim1Settings::default(), None, 1).unwrap();
        assert!(r.eta1_linear_accuracy > 0.9);
        assert!(r.eta2_oracle_hr_accuracy > 0.8);
        assert!(run_claim1(
            &Claim1Settings {
                n: 10,
                ..Default::default()
            },
            None,
            1
        )
        .is_err());
    }

    #[test]
    fn targets_encoding() {
        let ds = Dataset::new(DMatrix::from_row_slice(3, 1, &[1.0, 2.0, 3.0]), vec![0, 1, 1], 2).unwrap();
        assert_eq!(
            Targets::of(&ds),
            Targets::Binary(DVector::from_row_slice(&[-1.0, 1.0, 1.0]))
        );
    }
}
