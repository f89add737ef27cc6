//! Synthetic data matching the sparse-coding and NNLS experiments.
//!
//! Randomness comes from ChaCha8 seeded with the dataset seed. Independent
//! streams are used for the dictionary and for each (distribution, split)
//! pair, so a seen and an unseen dataset generated with the same seed share
//! their dictionary. Gaussians are drawn with `rand_distr::StandardNormal`
//! (ziggurat). The second parameter of every `N(·,·)` below is a variance.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{Dictionary, ProblemInstance, ProblemKind};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DistributionTag {
    Seen,
    Unseen,
}

impl DistributionTag {
    pub fn as_str(self) -> &'static str {
        match self {
            DistributionTag::Seen => "seen",
            DistributionTag::Unseen => "unseen",
        }
    }
}

impl fmt::Display for DistributionTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DistributionTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "seen" => Ok(DistributionTag::Seen),
            "unseen" => Ok(DistributionTag::Unseen),
            other => Err(Error::Parse(format!("unknown distribution tag {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

/// Entrywise sampling law for codes and noise vectors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CodeDistribution {
    /// `Ber(p) ∘ N(mean, variance)`.
    BernoulliGaussian { p: f64, mean: f64, variance: f64 },
    /// `max(N(mean, variance), 0)`.
    ClippedGaussian { mean: f64, variance: f64 },
    /// `N(0, variance)`.
    Gaussian { variance: f64 },
}

impl CodeDistribution {
    fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        // Both draws are always consumed so the stream layout does not depend on p.
        match *self {
            CodeDistribution::BernoulliGaussian { p, mean, variance } => {
                let u: f64 = rng.random();
                let z: f64 = rng.sample(StandardNormal);
                if u < p {
                    mean + variance.sqrt() * z
                } else {
                    0.0
                }
            }
            CodeDistribution::ClippedGaussian { mean, variance } => {
                let z: f64 = rng.sample(StandardNormal);
                (mean + variance.sqrt() * z).max(0.0)
            }
            CodeDistribution::Gaussian { variance } => {
                let z: f64 = rng.sample(StandardNormal);
                variance.sqrt() * z
            }
        }
    }

    fn vector(&self, len: usize, rng: &mut ChaCha8Rng) -> DVector<f64> {
        DVector::from_iterator(len, (0..len).map(|_| self.sample(rng)))
    }
}

/// Everything that determines a synthetic dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorSpec {
    pub kind: ProblemKind,
    pub m: usize,
    pub n: usize,
    pub tau: f64,
    pub n_train: usize,
    pub n_test: usize,
    pub dist: DistributionTag,
    pub seed: u64,
    /// Variance of the i.i.d. Gaussian dictionary entries.
    pub entry_variance: f64,
    pub normalize_columns: bool,
    pub code: CodeDistribution,
    pub noise: CodeDistribution,
}

impl GeneratorSpec {
    /// Defaults for `kind`: dictionary law, code and noise distributions.
    pub fn new(
        kind: ProblemKind,
        m: usize,
        n: usize,
        n_train: usize,
        n_test: usize,
        dist: DistributionTag,
        seed: u64,
    ) -> Self {
        let sparse = match dist {
            DistributionTag::Seen => CodeDistribution::BernoulliGaussian { p: 0.1, mean: 0.0, variance: 1.0 },
            DistributionTag::Unseen => CodeDistribution::BernoulliGaussian { p: 0.2, mean: 0.0, variance: 2.0 },
        };
        let mf = m as f64;
        let (entry_variance, normalize_columns, code, noise) = match kind {
            ProblemKind::Lasso => (1.0 / mf, true, sparse, CodeDistribution::Gaussian { variance: 0.01 / mf }),
            ProblemKind::L1L1 => (1.0 / mf, true, sparse, sparse),
            ProblemKind::Nnls => {
                let code = match dist {
                    DistributionTag::Seen => CodeDistribution::ClippedGaussian { mean: 0.0, variance: 1.0 },
                    DistributionTag::Unseen => CodeDistribution::ClippedGaussian { mean: 5.0, variance: 5.0 },
                };
                (1.0, false, code, CodeDistribution::Gaussian { variance: 1.0 / mf })
            }
        };
        GeneratorSpec {
            kind,
            m,
            n,
            tau: kind.default_tau(),
            n_train,
            n_test,
            dist,
            seed,
            entry_variance,
            normalize_columns,
            code,
            noise,
        }
    }

    pub fn with_tau(mut self, tau: f64) -> Self {
        self.tau = tau;
        self
    }
}

/// Dataset header: the fields that identify a dataset file.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetHeader {
    pub kind: ProblemKind,
    pub m: usize,
    pub n: usize,
    pub tau: f64,
    pub n_train: usize,
    pub n_test: usize,
    pub seed: u64,
    pub dist: DistributionTag,
}

/// A shared dictionary with train and test observations.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub header: DatasetHeader,
    dict: Arc<Dictionary>,
    train: Vec<ProblemInstance>,
    test: Vec<ProblemInstance>,
}

impl Dataset {
    pub(crate) fn from_parts(
        header: DatasetHeader,
        dict: Arc<Dictionary>,
        train: Vec<ProblemInstance>,
        test: Vec<ProblemInstance>,
    ) -> Self {
        Dataset { header, dict, train, test }
    }

    pub fn kind(&self) -> ProblemKind {
        self.header.kind
    }

    pub fn tau(&self) -> f64 {
        self.header.tau
    }

    pub fn dictionary(&self) -> &Arc<Dictionary> {
        &self.dict
    }

    pub fn split(&self, split: Split) -> &[ProblemInstance] {
        match split {
            Split::Train => &self.train,
            Split::Test => &self.test,
        }
    }

    pub fn train(&self) -> &[ProblemInstance] {
        &self.train
    }

    pub fn test(&self) -> &[ProblemInstance] {
        &self.test
    }
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn sample_stream(dist: DistributionTag, split: Split) -> u64 {
    let d = match dist {
        DistributionTag::Seen => 0,
        DistributionTag::Unseen => 1,
    };
    let s = match split {
        Split::Train => 0,
        Split::Test => 1,
    };
    1 + s + 2 * d
}

/// Generate a dataset from a full specification.
pub fn generate(spec: &GeneratorSpec) -> Result<Dataset> {
    if spec.m == 0 || spec.n == 0 {
        return Err(Error::InvalidParameter("dimensions must be at least 1".into()));
    }
    let mut rng = stream_rng(spec.seed, 0);
    let sd = spec.entry_variance.sqrt();
    let mut a = DMatrix::from_fn(spec.m, spec.n, |_, _| sd * rng.sample::<f64, _>(StandardNormal));
    if spec.normalize_columns {
        for mut col in a.column_iter_mut() {
            let norm = col.norm();
            if norm == 0.0 {
                return Err(Error::Numeric("generated a zero dictionary column".into()));
            }
            col /= norm;
        }
    }
    let dict = Arc::new(Dictionary::new(a)?);

    let make = |split: Split, count: usize| -> Result<Vec<ProblemInstance>> {
        let mut rng = stream_rng(spec.seed, sample_stream(spec.dist, split));
        (0..count)
            .map(|_| {
                let x = spec.code.vector(spec.n, &mut rng);
                let noise = spec.noise.vector(spec.m, &mut rng);
                let d = dict.a() * &x + noise;
                ProblemInstance::new(spec.kind, dict.clone(), d, spec.tau)?.with_generating_code(x)
            })
            .collect()
    };
    let train = make(Split::Train, spec.n_train)?;
    let test = make(Split::Test, spec.n_test)?;
    let header = DatasetHeader {
        kind: spec.kind,
        m: spec.m,
        n: spec.n,
        tau: spec.tau,
        n_train: spec.n_train,
        n_test: spec.n_test,
        seed: spec.seed,
        dist: spec.dist,
    };
    Ok(Dataset::from_parts(header, dict, train, test))
}

/// LASSO data: `A` with `N(0, 1/m)` entries and unit columns, codes
/// `Ber(0.1)∘N(0,1)` (seen) or `Ber(0.2)∘N(0,2)` (unseen), noise `0.1·N(0, 1/m)`.
pub fn generate_lasso(
    m: usize,
    n: usize,
    tau: f64,
    n_train: usize,
    n_test: usize,
    dist: DistributionTag,
    seed: u64,
) -> Result<Dataset> {
    generate(&GeneratorSpec::new(ProblemKind::Lasso, m, n, n_train, n_test, dist, seed).with_tau(tau))
}

/// ℓ₁–ℓ₁ data: as LASSO, but the noise is drawn from the code distribution.
pub fn generate_l1l1(
    m: usize,
    n: usize,
    tau: f64,
    n_train: usize,
    n_test: usize,
    dist: DistributionTag,
    seed: u64,
) -> Result<Dataset> {
    generate(&GeneratorSpec::new(ProblemKind::L1L1, m, n, n_train, n_test, dist, seed).with_tau(tau))
}

/// NNLS data: `A` with `N(0,1)` entries (not normalized), codes
/// `max(N(0,1),0)` (seen) or `max(N(5,5),0)` (unseen), noise `N(0, 1/m)`.
pub fn generate_nnls(
    m: usize,
    n: usize,
    n_train: usize,
    n_test: usize,
    dist: DistributionTag,
    seed: u64,
) -> Result<Dataset> {
    generate(&GeneratorSpec::new(ProblemKind::Nnls, m, n, n_train, n_test, dist, seed))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lasso_columns_are_unit_norm() {
        let ds = generate_lasso(30, 60, 0.001, 5, 2, DistributionTag::Seen, 3).unwrap();
        assert!(ds.dictionary().max_column_norm_deviation() <= 1e-12);
        assert_eq!(ds.train().len(), 5);
        assert_eq!(ds.test().len(), 2);
        assert_eq!(ds.tau(), 0.001);
    }

    #[test]
    fn seen_and_unseen_share_the_dictionary() {
        let seen = generate_lasso(10, 20, 0.001, 3, 3, DistributionTag::Seen, 11).unwrap();
        let unseen = generate_lasso(10, 20, 0.001, 3, 3, DistributionTag::Unseen, 11).unwrap();
        assert_eq!(seen.dictionary().a(), unseen.dictionary().a());
        assert_ne!(seen.test()[0].d(), unseen.test()[0].d());
        assert_ne!(seen.train()[0].d(), seen.test()[0].d());
    }

    #[test]
    fn regeneration_is_bit_identical() {
        let a = generate_nnls(12, 6, 4, 2, DistributionTag::Unseen, 5).unwrap();
        let b = generate_nnls(12, 6, 4, 2, DistributionTag::Unseen, 5).unwrap();
        assert_eq!(a.dictionary().a(), b.dictionary().a());
        for (x, y) in a.train().iter().zip(b.train()) {
            assert_eq!(x.d(), y.d());
            assert_eq!(x.generating_code(), y.generating_code());
        }
    }

    #[test]
    fn seen_sparsity_concentrates_at_one_tenth() {
        // 10^5 Bernoulli(0.1) draws: sigma = sqrt(0.1*0.9/1e5) ~ 9.5e-4.
        let ds = generate_lasso(4, 1000, 0.001, 100, 0, DistributionTag::Seen, 1).unwrap();
        let nz: usize = ds
            .train()
            .iter()
            .map(|p| p.generating_code().unwrap().iter().filter(|v| **v != 0.0).count())
            .sum();
        let frac = nz as f64 / 1e5;
        let sigma = (0.1f64 * 0.9 / 1e5).sqrt();
        assert!((frac - 0.1).abs() <= 3.0 * sigma, "fraction {frac}");
    }

    #[test]
    fn l1l1_noise_is_sparse() {
        let ds = generate_l1l1(500, 4, 1.0, 100, 0, DistributionTag::Seen, 2).unwrap();
        assert_eq!(ds.tau(), 1.0);
        // With x* removed, d - A x* is the noise vector.
        let mut nz = 0usize;
        for p in ds.train() {
            let e = p.d() - p.a() * p.generating_code().unwrap();
            nz += e.iter().filter(|v| v.abs() > 1e-12).count();
        }
        let frac = nz as f64 / 5e4;
        let sigma = (0.1f64 * 0.9 / 5e4).sqrt();
        assert!((frac - 0.1).abs() <= 3.0 * sigma, "fraction {frac}");
    }

    #[test]
    fn l1l1_zero_sparsity_gives_zero_observations() {
        let mut spec = GeneratorSpec::new(ProblemKind::L1L1, 8, 16, 3, 0, DistributionTag::Seen, 9);
        spec.code = CodeDistribution::BernoulliGaussian { p: 0.0, mean: 0.0, variance: 1.0 };
        spec.noise = spec.code;
        let ds = generate(&spec).unwrap();
        for p in ds.train() {
            assert_eq!(p.d().amax(), 0.0);
            assert_eq!(p.objective(&DVector::zeros(16)).unwrap(), 0.0);
        }
    }

    #[test]
    fn nnls_codes_are_nonnegative_and_half_sparse() {
        let ds = generate_nnls(10, 500, 40, 0, DistributionTag::Seen, 4).unwrap();
        assert!(ds.dictionary().max_column_norm_deviation() > 1e-3);
        let mut zeros = 0usize;
        for p in ds.train() {
            let x = p.generating_code().unwrap();
            assert!(x.iter().all(|v| *v >= 0.0));
            zeros += x.iter().filter(|v| **v == 0.0).count();
        }
        let frac = zeros as f64 / 2e4;
        assert!((frac - 0.5).abs() < 0.02, "zero fraction {frac}");
    }
}
