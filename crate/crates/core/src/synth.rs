//! Seeded synthetic price panel with planted covariance regimes.
//!
//! Log-levels are `mu_c + s * z_c(t)` with `z` drawn independently each
//! month from a regime-specific factor model, so level correlations over a
//! window reflect whichever regimes the window covers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::panel::{Month, PricePanel, WindowSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Partition {
    /// `blocks` runs of consecutive countries.
    Contiguous(usize),
    /// Country `c` joins block `c % blocks`.
    Interleaved(usize),
}

impl Partition {
    fn block_of(self, c: usize, n: usize) -> usize {
        match self {
            Partition::Contiguous(b) => c * b / n,
            Partition::Interleaved(b) => c % b,
        }
    }

    fn blocks(self) -> usize {
        match self {
            Partition::Contiguous(b) | Partition::Interleaved(b) => b,
        }
    }
}

/// Dependence pattern inside each block; nothing is shared across blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    /// One factor, equal loadings `strength`: every pair correlates
    /// `strength^2`.
    Uniform,
    /// AR(1) along the member order: neighbors correlate `strength`,
    /// members `k` apart `strength^k`. The tree is a path.
    Chain,
    /// The first member tracks the block factor almost exactly, the others
    /// load `strength` on it. The tree is a star.
    Hub,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Regime {
    pub partition: Partition,
    pub shape: Shape,
    pub strength: f64,
    /// Common volatility multiplier of the regime's shocks.
    pub volatility: f64,
}

impl Regime {
    pub fn new(partition: Partition, shape: Shape, strength: f64) -> Self {
        Regime {
            partition,
            shape,
            strength,
            volatility: 1.0,
        }
    }

    pub fn with_volatility(mut self, volatility: f64) -> Self {
        self.volatility = volatility;
        self
    }

    /// Fills `z` (one unit-variance entry per country) for a single month.
    fn draw(self, rng: &mut ChaCha8Rng, z: &mut [f64]) {
        let n = z.len();
        let mut normal = || -> f64 { StandardNormal.sample(rng) };
        let a = self.strength;
        let e = (1.0 - a * a).sqrt();
        for b in 0..self.partition.blocks() {
            let members = (0..n).filter(|&c| self.partition.block_of(c, n) == b);
            match self.shape {
                Shape::Uniform => {
                    let f = normal();
                    for c in members {
                        z[c] = a * f + e * normal();
                    }
                }
                Shape::Chain => {
                    let mut prev: Option<f64> = None;
                    for c in members {
                        let v = match prev {
                            None => normal(),
                            Some(p) => a * p + e * normal(),
                        };
                        z[c] = v;
                        prev = Some(v);
                    }
                }
                Shape::Hub => {
                    let f = normal();
                    for (k, c) in members.enumerate() {
                        z[c] = if k == 0 {
                            0.995 * f + (1.0 - 0.995f64 * 0.995).sqrt() * normal()
                        } else {
                            a * f + e * normal()
                        };
                    }
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub countries: usize,
    pub months: usize,
    pub start: Month,
    /// First month of each regime after the first.
    pub breaks: Vec<usize>,
    pub regimes: Vec<Regime>,
    pub seed: u64,
}

/// Default regimes: six loose contiguous blocks, then two tight interleaved
/// blocks, then five loose contiguous blocks. Every flip reassigns most
/// tree edges, and the loose/tight contrast moves the distance levels too.
impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            countries: 30,
            months: 720,
            start: Month::new(1955, 1).expect("valid month"),
            breaks: vec![240, 480],
            regimes: vec![
                Regime::new(Partition::Contiguous(6), Shape::Uniform, 0.6),
                Regime::new(Partition::Interleaved(2), Shape::Uniform, 0.95),
                Regime::new(Partition::Contiguous(5), Shape::Uniform, 0.6),
            ],
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.regimes.len() != self.breaks.len() + 1 {
            return Err(Error::Config("need one more regime than breaks".into()));
        }
        if self.countries < 2 || self.months < 2 {
            return Err(Error::Config("need at least 2 countries and 2 months".into()));
        }
        if self.breaks.windows(2).any(|w| w[0] >= w[1]) || self.breaks.iter().any(|&b| b == 0 || b >= self.months) {
            return Err(Error::Config("breaks must be increasing and inside the panel".into()));
        }
        Ok(())
    }

    /// Change-point index (between windows `t` and `t + 1`) closest to each
    /// break: the last window whose center precedes the break month.
    pub fn truth_change_points(&self, spec: &WindowSpec) -> Vec<usize> {
        let (l, s) = (spec.length_months as f64, spec.step_months as f64);
        self.breaks
            .iter()
            .map(|&b| ((b as f64 - l / 2.0) / s).ceil() as usize - 1)
            .collect()
    }
}

pub fn country_code(i: usize) -> String {
    format!("C{i:02}")
}

pub fn generate(cfg: &SynthConfig) -> Result<PricePanel> {
    cfg.validate()?;
    let n = cfg.countries;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut series = vec![Vec::with_capacity(cfg.months); n];
    let mut z = vec![0.0; n];
    let mut regime = 0;
    for t in 0..cfg.months {
        while regime < cfg.breaks.len() && t >= cfg.breaks[regime] {
            regime += 1;
        }
        let r = cfg.regimes[regime];
        r.draw(&mut rng, &mut z);
        for c in 0..n {
            let mu = 4.0 + 0.05 * c as f64;
            let v = (mu + 0.08 * r.volatility * z[c]).exp();
            // Round to 1e-6 so the CSV round-trip is short and exact.
            series[c].push(Some((v * 1e6).round() / 1e6));
        }
    }
    PricePanel::new(cfg.start, (0..n).map(country_code).collect(), series)
}
