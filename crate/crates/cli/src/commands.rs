use std::io::Write as _;
use std::path::{Path, PathBuf};

use log::info;
use serde::{Deserialize, Serialize};
use simplexsm::diagnostics::{dirichlet_moment_fit, marginal_report, DiagnosticReport};
use simplexsm::sampler::{sample_model, sample_multinomial_compound, RejectionStats, RngConfig};
use simplexsm::simulation::{preset, presets, run_study, BaselineCell, Estimator, StudyConfig};
use simplexsm::weight::cap_from_quantile;
use simplexsm::{
    fit_continuous, fit_counts, ContinuousDataset, CountDataset, CountEstimator, Family, FitResult, Label,
    ModelSpec, WeightKind, WeightSpec,
};

use crate::config::{self, BenchConfig, DataKind, EstimatorChoice, FitConfig, SimulateConfig, SCHEMA_VERSION};
use crate::error::CliError;
use crate::output::{read_input, FileDigest, OutputDir};

/// Named RNG substreams derived from the single `--seed`.
mod stream {
    pub const LATENT: u64 = 0;
    pub const MULTINOMIAL: u64 = 1;
    pub const FITTED: u64 = 0;
    pub const BASELINE: u64 = 1;
}

pub enum Dataset {
    Proportions(ContinuousDataset),
    Counts(CountDataset),
}

impl Dataset {
    fn p(&self) -> usize {
        match self {
            Dataset::Proportions(d) => d.p(),
            Dataset::Counts(d) => d.p(),
        }
    }

    fn n(&self) -> usize {
        match self {
            Dataset::Proportions(d) => d.n(),
            Dataset::Counts(d) => d.n(),
        }
    }

    fn proportions(&self) -> simplexsm::Result<ContinuousDataset> {
        match self {
            Dataset::Proportions(d) => Ok(d.clone()),
            Dataset::Counts(d) => d.to_proportions(),
        }
    }

    fn kind(&self) -> DataKind {
        match self {
            Dataset::Proportions(_) => DataKind::Proportions,
            Dataset::Counts(_) => DataKind::Counts,
        }
    }

    /// Drops one-based rows.
    fn exclude(self, rows: &[usize]) -> Result<Self, CliError> {
        if rows.is_empty() {
            return Ok(self);
        }
        let n = self.n();
        if let Some(&bad) = rows.iter().find(|&&r| r == 0 || r > n) {
            return Err(CliError::input("exclude-rows", format!("row {bad} is outside 1..={n}")));
        }
        let zero_based: Vec<usize> = rows.iter().map(|r| r - 1).collect();
        info!("excluding {} rows", zero_based.len());
        Ok(match self {
            Dataset::Proportions(d) => Dataset::Proportions(d.exclude_rows(&zero_based)?),
            Dataset::Counts(d) => Dataset::Counts(d.exclude_rows(&zero_based)?),
        })
    }
}

pub fn load_dataset(bytes: &[u8], kind: DataKind) -> Result<Dataset, CliError> {
    Ok(match kind {
        DataKind::Proportions => Dataset::Proportions(ContinuousDataset::read_csv(bytes)?),
        DataKind::Counts => Dataset::Counts(CountDataset::read_csv(bytes)?),
        DataKind::Auto => {
            let header = bytes.split(|&b| b == b'\n').next().unwrap_or_default();
            let has_total = String::from_utf8_lossy(header).split(',').any(|h| h.trim().eq_ignore_ascii_case("total"));
            match CountDataset::read_csv(bytes) {
                Ok(c) if has_total || c.totals().iter().any(|&m| m > 1) => Dataset::Counts(c),
                Err(e) if has_total => return Err(e.into()),
                _ => Dataset::Proportions(ContinuousDataset::read_csv(bytes)?),
            }
        }
    })
}

fn read_config<T: serde::de::DeserializeOwned + config::Versioned>(
    path: &Path,
    inputs: &mut Vec<FileDigest>,
) -> Result<T, CliError> {
    let bytes = read_input(path, inputs)?;
    let text = String::from_utf8(bytes).map_err(|_| CliError::input("config", "config file is not UTF-8"))?;
    config::parse(&text, path)
}

pub struct FitOverrides {
    pub weight: Option<WeightKind>,
    pub ac: Option<f64>,
    pub estimator: Option<EstimatorChoice>,
    pub exclude_rows: Option<Vec<usize>>,
}

/// Config echo written to the manifest: the file's settings after flags and
/// data-driven defaults are applied.
#[derive(Serialize)]
struct ResolvedFit {
    #[serde(flatten)]
    config: FitConfig,
    data_kind: DataKind,
    p: usize,
    n: usize,
}

fn build_model(cfg: &FitConfig, p: usize) -> Result<ModelSpec, CliError> {
    let r = p.saturating_sub(1);
    let zeros = || (nalgebra::DMatrix::zeros(r, r), nalgebra::DVector::zeros(r));
    let mut model = match cfg.family {
        Family::Dirichlet => {
            if cfg.beta.is_some() {
                return Err(CliError::input("config", "beta is estimated for the dirichlet family; remove it"));
            }
            ModelSpec::dirichlet(vec![0.0; p])?
        }
        Family::TruncatedGaussian => {
            if cfg.beta.as_ref().is_some_and(|b| b.iter().any(|&v| v != 0.0)) {
                return Err(CliError::input("config", "the truncated-gaussian family has beta = 0; use family = \"hybrid\""));
            }
            let (a, b) = zeros();
            ModelSpec::truncated_gaussian(a, b)?
        }
        Family::Hybrid => {
            let beta = cfg.beta.clone().unwrap_or_else(|| vec![0.0; p]);
            if beta.len() != p {
                return Err(CliError::input("config", format!("beta has {} entries but the data have {p} categories", beta.len())));
            }
            let (a, b) = zeros();
            ModelSpec::hybrid(a, b, beta)?
        }
    };
    if model.family != Family::Dirichlet {
        if !cfg.estimate_linear {
            model = model.with_linear_fixed();
        }
        for (label, &value) in &cfg.fixed {
            model = model.with_fixed(label.parse::<Label>()?, value)?;
        }
    } else if !cfg.fixed.is_empty() || !cfg.estimate_linear {
        return Err(CliError::input("config", "the dirichlet family has no fixable a or b parameters"));
    }
    Ok(model)
}

pub fn fit(
    data: &Path,
    config_path: Option<&Path>,
    out: &Path,
    overrides: FitOverrides,
    force: bool,
) -> Result<PathBuf, CliError> {
    let mut inputs = Vec::new();
    let mut cfg: FitConfig = match config_path {
        Some(p) => read_config(p, &mut inputs)?,
        None => FitConfig::default(),
    };
    if let Some(kind) = overrides.weight {
        cfg.weight.kind = kind;
        if !kind.is_capped() {
            cfg.weight.a_c = None;
            cfg.weight.cap_quantile = None;
        }
    }
    if let Some(ac) = overrides.ac {
        cfg.weight.a_c = Some(ac);
        cfg.weight.cap_quantile = None;
    }
    if let Some(e) = overrides.estimator {
        cfg.estimator = e;
    }
    if let Some(rows) = overrides.exclude_rows {
        cfg.exclude_rows = rows;
    }
    let mut output = OutputDir::create(out, force)?;

    let bytes = read_input(data, &mut inputs)?;
    let dataset = load_dataset(&bytes, cfg.data)?.exclude(&cfg.exclude_rows)?;
    let model = build_model(&cfg, dataset.p())?;

    let kind = cfg.weight.kind;
    let weight = if kind.is_capped() {
        let a_c = match (cfg.weight.a_c, cfg.weight.cap_quantile) {
            (Some(a), _) => a,
            (None, Some(q)) => {
                let a = cap_from_quantile(&dataset.proportions()?.sqrt_transform(), kind, q)?;
                info!("a_c = {a} from the {q} quantile of the uncapped weights");
                a
            }
            (None, None) => return Err(CliError::input("config", format!("{kind} weight needs a_c or cap_quantile"))),
        };
        cfg.weight.a_c = Some(a_c);
        WeightSpec::new(kind, a_c)?
    } else {
        if cfg.weight.a_c.is_some_and(|a| a != 1.0) {
            return Err(CliError::input("config", format!("{kind} weight takes no a_c")));
        }
        WeightSpec::new(kind, 1.0)?
    };

    let result = match (&dataset, cfg.estimator) {
        (Dataset::Proportions(d), EstimatorChoice::Continuous) => fit_continuous(d, &model, weight, cfg.ridge)?,
        (Dataset::Proportions(_), EstimatorChoice::Factorial) => {
            return Err(CliError::input("config", "the factorial estimator needs count data"))
        }
        (Dataset::Counts(c), EstimatorChoice::Continuous) => {
            fit_counts(c, &model, weight, CountEstimator::Proportions, cfg.ridge)?
        }
        (Dataset::Counts(c), EstimatorChoice::Factorial) => {
            fit_counts(c, &model, weight, CountEstimator::Factorial, cfg.ridge)?
        }
    };

    output.write_json("fit.json", &result)?;
    output.write_with("estimates.csv", |w| result.write_table_csv(w))?;
    let resolved = ResolvedFit { data_kind: dataset.kind(), p: dataset.p(), n: dataset.n(), config: cfg };
    output.commit("fit", None, &resolved, inputs)
}

#[derive(Serialize)]
struct SimulationSidecar<'a> {
    model: &'a ModelSpec,
    preset: Option<u32>,
    n: usize,
    total: Option<u64>,
    seed: u64,
    streams: [(&'static str, u64); 2],
    sampler: Option<RejectionStats>,
}

pub struct SimulateOverrides {
    pub preset: Option<u32>,
    pub n: Option<usize>,
    pub total: Option<u64>,
    pub seed: Option<u64>,
}

pub fn simulate(config_path: Option<&Path>, out: &Path, o: SimulateOverrides, force: bool) -> Result<PathBuf, CliError> {
    let mut inputs = Vec::new();
    let mut cfg = match config_path {
        Some(p) => read_config::<SimulateConfig>(p, &mut inputs)?,
        None => SimulateConfig {
            version: SCHEMA_VERSION,
            preset: None,
            model: None,
            n: o.n.ok_or_else(|| CliError::input("usage", "simulate needs --n or a config file"))?,
            total: None,
            seed: 0,
        },
    };
    if o.preset.is_some() {
        cfg.preset = o.preset;
        cfg.model = None;
    }
    cfg.n = o.n.unwrap_or(cfg.n);
    cfg.total = o.total.or(cfg.total);
    cfg.seed = o.seed.unwrap_or(cfg.seed);
    let model = match (&cfg.preset, &cfg.model) {
        (Some(_), Some(_)) => return Err(CliError::input("config", "give either preset or model, not both")),
        (Some(id), None) => {
            let pr = preset(*id)?;
            cfg.total = cfg.total.or(pr.total);
            pr.model
        }
        (None, Some(m)) => {
            m.validate()?;
            m.clone()
        }
        (None, None) => return Err(CliError::input("usage", "simulate needs --preset or a model in the config")),
    };
    if cfg.n == 0 {
        return Err(CliError::input("config", "n must be positive"));
    }
    let mut output = OutputDir::create(out, force)?;

    let (latent, stats) = sample_model(&model, cfg.n, &mut RngConfig::new(cfg.seed, stream::LATENT).rng())?;
    output.write_with("proportions.csv", |w| latent.write_csv(w))?;
    if let Some(m) = cfg.total {
        let counts =
            sample_multinomial_compound(&latent, &[m], &mut RngConfig::new(cfg.seed, stream::MULTINOMIAL).rng())?;
        output.write_with("counts.csv", |w| counts.write_csv(w))?;
    }
    output.write_json(
        "simulation.json",
        &SimulationSidecar {
            model: &model,
            preset: cfg.preset,
            n: cfg.n,
            total: cfg.total,
            seed: cfg.seed,
            streams: [("latent", stream::LATENT), ("multinomial", stream::MULTINOMIAL)],
            sampler: stats,
        },
    )?;
    output.commit("simulate", Some(cfg.seed), &cfg, inputs)
}

/// `diagnose` accepts either a fit result or a bare model spec.
#[derive(Deserialize)]
#[serde(untagged)]
enum ModelFile {
    Fit(Box<FitResult>),
    Spec(ModelSpec),
}

#[derive(Serialize)]
struct DirichletBaseline {
    beta: Vec<f64>,
    report: DiagnosticReport,
}

#[derive(Serialize)]
struct DiagnoseOutput<'a> {
    model: &'a ModelSpec,
    seed: u64,
    report: DiagnosticReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    dirichlet_baseline: Option<DirichletBaseline>,
}

#[derive(Serialize)]
struct ResolvedDiagnose {
    grid: Option<u64>,
    n_sim: usize,
    seed: u64,
    dirichlet_baseline: bool,
    exclude_rows: Vec<usize>,
}

pub struct DiagnoseArgs<'a> {
    pub data: &'a Path,
    pub model: &'a Path,
    pub out: &'a Path,
    pub grid: Option<u64>,
    pub n_sim: usize,
    pub seed: u64,
    pub dirichlet_baseline: bool,
    pub exclude_rows: Vec<usize>,
    pub force: bool,
}

pub fn diagnose(a: DiagnoseArgs) -> Result<PathBuf, CliError> {
    let mut inputs = Vec::new();
    let model_bytes = read_input(a.model, &mut inputs)?;
    let model = match serde_json::from_slice::<ModelFile>(&model_bytes)
        .map_err(|e| CliError::input("model", format!("{}: {e}", a.model.display())))?
    {
        ModelFile::Fit(f) => f.model,
        ModelFile::Spec(s) => s,
    };
    model.validate()?;
    if a.n_sim == 0 {
        return Err(CliError::input("usage", "--n-sim must be positive"));
    }
    let mut output = OutputDir::create(a.out, a.force)?;
    let bytes = read_input(a.data, &mut inputs)?;
    let dataset = load_dataset(&bytes, DataKind::Auto)?.exclude(&a.exclude_rows)?;
    let grid = a.grid.or(match &dataset {
        Dataset::Counts(c) if c.totals().windows(2).all(|w| w[0] == w[1]) => c.totals().first().copied(),
        _ => None,
    });
    let observed = dataset.proportions()?;
    let report = marginal_report(&observed, &model, grid, a.n_sim, &mut RngConfig::new(a.seed, stream::FITTED).rng())?;
    let baseline = if a.dirichlet_baseline {
        let beta = dirichlet_moment_fit(&observed)?;
        let spec = ModelSpec::dirichlet(beta.clone())?;
        let report = marginal_report(&observed, &spec, grid, a.n_sim, &mut RngConfig::new(a.seed, stream::BASELINE).rng())?;
        Some(DirichletBaseline { beta, report })
    } else {
        None
    };

    let mut qq = Vec::new();
    writeln!(qq, "model,category,probability,observed,simulated").unwrap();
    let mut tables = vec![("fitted", &report)];
    if let Some(b) = &baseline {
        tables.push(("dirichlet", &b.report));
    }
    for (name, rep) in tables {
        for c in &rep.categories {
            for (k, (o, s)) in c.qq.iter().enumerate() {
                let prob = (k + 1) as f64 / (c.qq.len() + 1) as f64;
                writeln!(qq, "{name},{},{prob},{o},{s}", c.name).unwrap();
            }
        }
    }
    output.write("qq.csv", &qq)?;
    output.write_json("report.json", &DiagnoseOutput { model: &model, seed: a.seed, report, dirichlet_baseline: baseline })?;
    let resolved = ResolvedDiagnose {
        grid,
        n_sim: a.n_sim,
        seed: a.seed,
        dirichlet_baseline: a.dirichlet_baseline,
        exclude_rows: a.exclude_rows,
    };
    output.commit("diagnose", Some(a.seed), &resolved, inputs)
}

pub struct BenchOverrides {
    pub preset: Option<u32>,
    pub n: Option<usize>,
    pub replicates: Option<usize>,
    pub estimators: Option<Vec<u8>>,
    pub seed: Option<u64>,
}

pub fn bench(config_path: Option<&Path>, out: &Path, o: BenchOverrides, force: bool) -> Result<PathBuf, CliError> {
    let mut inputs = Vec::new();
    let mut cfg = match config_path {
        Some(p) => read_config::<BenchConfig>(p, &mut inputs)?,
        None => BenchConfig {
            version: SCHEMA_VERSION,
            preset: None,
            model: None,
            total: None,
            ac_min: None,
            ac_product: None,
            estimators: vec![Estimator::CappedMin],
            n: o.n.ok_or_else(|| CliError::input("usage", "bench needs --n or a config file"))?,
            replicates: 100,
            seed: 0,
            ridge: 0.0,
            baselines: Vec::new(),
        },
    };
    if o.preset.is_some() {
        cfg.preset = o.preset;
        cfg.model = None;
    }
    cfg.n = o.n.unwrap_or(cfg.n);
    cfg.replicates = o.replicates.unwrap_or(cfg.replicates);
    cfg.seed = o.seed.unwrap_or(cfg.seed);
    if let Some(list) = o.estimators {
        cfg.estimators = list
            .into_iter()
            .map(Estimator::try_from)
            .collect::<Result<_, _>>()
            .map_err(|e| CliError::input("usage", e))?;
    }
    let study = match (cfg.preset, &cfg.model) {
        (Some(_), Some(_)) => return Err(CliError::input("config", "give either preset or model, not both")),
        (Some(id), None) => {
            let mut s = StudyConfig::from_preset(id, cfg.n, cfg.replicates, cfg.estimators.clone(), cfg.seed)?;
            s.total = cfg.total.or(s.total);
            s.ac_min = cfg.ac_min.unwrap_or(s.ac_min);
            s.ac_product = cfg.ac_product.unwrap_or(s.ac_product);
            s.ridge = cfg.ridge;
            s
        }
        (None, Some(m)) => StudyConfig {
            model: m.clone(),
            total: cfg.total,
            ac_min: cfg.ac_min.ok_or_else(|| CliError::input("config", "ac_min is required with an explicit model"))?,
            ac_product: cfg
                .ac_product
                .ok_or_else(|| CliError::input("config", "ac_product is required with an explicit model"))?,
            estimators: cfg.estimators.clone(),
            n: cfg.n,
            replicates: cfg.replicates,
            seed: cfg.seed,
            ridge: cfg.ridge,
            preset: None,
        },
        (None, None) => return Err(CliError::input("usage", "bench needs --preset or a model in the config")),
    };
    study.validate()?;
    let mut output = OutputDir::create(out, force)?;
    let summary = run_study(&study)?;
    let baselines: Vec<BaselineCell> = cfg
        .baselines
        .iter()
        .map(|b| BaselineCell {
            estimator: b.name.clone(),
            parameter: b.parameter.clone(),
            se: b.se,
            rmse: b.rmse,
            rbias: b.rbias,
        })
        .collect();
    output.write_with("summary.csv", |w| summary.write_summary_csv(w, &baselines))?;
    output.write_with("replicates.csv", |w| summary.write_replicates_csv(w))?;
    #[derive(Serialize)]
    struct SummaryJson<'a> {
        config: &'a StudyConfig,
        cells: &'a [simplexsm::simulation::CellSummary],
        failures: &'a [(Estimator, usize)],
    }
    output.write_json(
        "summary.json",
        &SummaryJson { config: &summary.config, cells: &summary.cells, failures: &summary.failures },
    )?;
    output.commit("bench", Some(cfg.seed), &study, inputs)
}

pub fn presets_list(w: &mut impl std::io::Write) -> std::io::Result<()> {
    writeln!(w, "id\tp\tfamily\ttotal\tac_min\tac_product\tdescription")?;
    for p in presets() {
        let total = p.total.map(|m| m.to_string()).unwrap_or_else(|| "-".into());
        writeln!(
            w,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}",
            p.id, p.model.p, p.model.family, total, p.ac_min, p.ac_product, p.description
        )?;
    }
    Ok(())
}
