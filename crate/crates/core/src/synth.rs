//! Deterministic synthetic user-log corpora.
//!
//! Each class owns a disjoint block of `num_terms / num_classes` vocabulary
//! terms, searched with Zipf-distributed ranks. A shared pool of noise terms,
//! also Zipf-ranked, is drawn by users of every class, which gives the corpus
//! its cross-class overlap. One line is written per user.
//!
//! Labels encode the planted structure: class `c` is `class-c`, its rank-`r`
//! term is `c{c}-term{r}` and noise terms are `noise-{k}` (all zero-padded).

use std::io::{self, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Zipf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub num_classes: usize,
    /// Class-owned vocabulary size, split evenly across classes.
    pub num_terms: usize,
    pub num_users: usize,
    pub zipf_exponent: f64,
    pub seed: u64,
    pub noise_terms: usize,
    /// Probability that a single search picks a noise term.
    pub noise_rate: f64,
    pub max_terms_per_user: usize,
}

impl SynthConfig {
    pub fn new(num_classes: usize, num_terms: usize, num_users: usize, zipf_exponent: f64, seed: u64) -> Self {
        Self {
            num_classes,
            num_terms,
            num_users,
            zipf_exponent,
            seed,
            noise_terms: (num_terms / 10).max(1),
            noise_rate: 0.1,
            max_terms_per_user: 6,
        }
    }

    fn check(&self) -> Result<(), SynthError> {
        let bad = |msg: &str| Err(SynthError::InvalidParameter(msg.to_owned()));
        if self.num_classes == 0 {
            return bad("num_classes must be positive");
        }
        if self.num_terms < self.num_classes {
            return bad("num_terms must be at least num_classes");
        }
        if !(self.zipf_exponent.is_finite() && self.zipf_exponent > 0.0) {
            return bad("zipf_exponent must be positive");
        }
        if !(0.0..=1.0).contains(&self.noise_rate) {
            return bad("noise_rate must lie in [0, 1]");
        }
        if self.noise_rate > 0.0 && self.noise_terms == 0 {
            return bad("noise_rate > 0 needs at least one noise term");
        }
        if self.max_terms_per_user == 0 {
            return bad("max_terms_per_user must be positive");
        }
        Ok(())
    }
}

pub fn class_label(class: usize) -> String {
    format!("class-{class:03}")
}

pub fn term_label(class: usize, rank: usize) -> String {
    format!("c{class:03}-term{rank:05}")
}

pub fn noise_label(rank: usize) -> String {
    format!("noise-{rank:04}")
}

/// Class index planted for a generated term label; `None` for noise terms
/// and foreign labels.
pub fn planted_class(term: &str) -> Option<usize> {
    let rest = term.strip_prefix('c')?;
    let (class, tail) = rest.split_once("-term")?;
    tail.parse::<usize>().ok()?;
    class.parse().ok()
}

/// Writes the corpus. Same config, same bytes.
pub fn generate_synthetic<W: Write>(config: &SynthConfig, out: W) -> Result<(), SynthError> {
    config.check()?;
    let mut out = io::BufWriter::new(out);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let per_class = config.num_terms / config.num_classes;
    let class_rank = Zipf::new(per_class as f64, config.zipf_exponent)
        .map_err(|e| SynthError::InvalidParameter(e.to_string()))?;
    let noise_rank = if config.noise_terms > 0 {
        Some(
            Zipf::new(config.noise_terms as f64, config.zipf_exponent)
                .map_err(|e| SynthError::InvalidParameter(e.to_string()))?,
        )
    } else {
        None
    };
    let mut line = String::new();
    for user in 0..config.num_users {
        let class = rng.random_range(0..config.num_classes);
        let searches = rng.random_range(1..=config.max_terms_per_user);
        line.clear();
        line.push_str(&format!("user{user:07}\t{}\t", class_label(class)));
        for i in 0..searches {
            if i > 0 {
                line.push_str(", ");
            }
            let noise = match noise_rank {
                Some(dist) if rng.random_bool(config.noise_rate) => Some(dist.sample(&mut rng) as usize - 1),
                _ => None,
            };
            match noise {
                Some(rank) => line.push_str(&noise_label(rank)),
                None => line.push_str(&term_label(class, class_rank.sample(&mut rng) as usize - 1)),
            }
        }
        line.push('\n');
        out.write_all(line.as_bytes())?;
    }
    out.flush()?;
    Ok(())
}

pub fn generate_synthetic_bytes(config: &SynthConfig) -> Result<Vec<u8>, SynthError> {
    let mut buf = Vec::new();
    generate_synthetic(config, &mut buf)?;
    Ok(buf)
}
