//! Level-indexed families.
//!
//! Every queue-length dependent quantity (arrival and service rates, the
//! environment generators `V_n`, the jump matrices `R_n`) is described by a
//! finite prefix followed by a tail that repeats with a fixed period. A tail
//! entry may additionally grow by a fixed increment from one period block to
//! the next, which covers rates proportional to the queue length.
//!
//! For `n >= start` with `n = start + block * period + phase` the value is
//! `tail[phase] + block * growth[phase]`.

use nalgebra::DMatrix;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LevelSeqError {
    #[error("tail must contain at least one entry")]
    EmptyTail,
    #[error("growth has {growth} entries but the tail has {tail}")]
    GrowthLength { tail: usize, growth: usize },
}

/// Position of a level inside a [`LevelSeq`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Slot {
    Prefix(usize),
    Tail { phase: usize, block: usize },
}

/// Values that can be grown linearly block by block.
pub trait Growable: Clone {
    /// `self + block * growth`.
    fn grown(&self, growth: &Self, block: usize) -> Self;
    fn is_zero(&self) -> bool;
}

impl Growable for f64 {
    fn grown(&self, growth: &Self, block: usize) -> Self {
        self + block as f64 * growth
    }

    fn is_zero(&self) -> bool {
        *self == 0.0
    }
}

impl Growable for DMatrix<f64> {
    fn grown(&self, growth: &Self, block: usize) -> Self {
        self + growth * block as f64
    }

    fn is_zero(&self) -> bool {
        self.iter().all(|x| *x == 0.0)
    }
}

/// Finite prefix plus eventually periodic (optionally linearly growing) tail.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelSeq<T> {
    prefix: Vec<T>,
    tail: Vec<T>,
    growth: Option<Vec<T>>,
}

impl<T: Growable> LevelSeq<T> {
    pub fn new(prefix: Vec<T>, tail: Vec<T>) -> Result<Self, LevelSeqError> {
        if tail.is_empty() {
            return Err(LevelSeqError::EmptyTail);
        }
        Ok(Self {
            prefix,
            tail,
            growth: None,
        })
    }

    /// A tail whose entries grow by `growth[phase]` per period block. An all
    /// zero growth vector is normalised away.
    pub fn with_growth(
        prefix: Vec<T>,
        tail: Vec<T>,
        growth: Vec<T>,
    ) -> Result<Self, LevelSeqError> {
        if tail.is_empty() {
            return Err(LevelSeqError::EmptyTail);
        }
        if growth.len() != tail.len() {
            return Err(LevelSeqError::GrowthLength {
                tail: tail.len(),
                growth: growth.len(),
            });
        }
        let growth = if growth.iter().all(Growable::is_zero) {
            None
        } else {
            Some(growth)
        };
        Ok(Self {
            prefix,
            tail,
            growth,
        })
    }

    pub fn constant(value: T) -> Self {
        Self {
            prefix: Vec::new(),
            tail: vec![value],
            growth: None,
        }
    }

    pub fn tail_start(&self) -> usize {
        self.prefix.len()
    }

    pub fn period(&self) -> usize {
        self.tail.len()
    }

    pub fn prefix(&self) -> &[T] {
        &self.prefix
    }

    pub fn tail(&self) -> &[T] {
        &self.tail
    }

    pub fn growth(&self) -> Option<&[T]> {
        self.growth.as_deref()
    }

    /// True when the tail is purely periodic.
    pub fn is_bounded(&self) -> bool {
        self.growth.is_none()
    }

    pub fn slot(&self, n: usize) -> Slot {
        let start = self.tail_start();
        if n < start {
            Slot::Prefix(n)
        } else {
            let offset = n - start;
            Slot::Tail {
                phase: offset % self.period(),
                block: offset / self.period(),
            }
        }
    }

    pub fn at(&self, n: usize) -> T {
        match self.slot(n) {
            Slot::Prefix(i) => self.prefix[i].clone(),
            Slot::Tail { phase, block } => match &self.growth {
                None => self.tail[phase].clone(),
                Some(g) => self.tail[phase].grown(&g[phase], block),
            },
        }
    }

    /// Every stored component, for structural checks.
    pub fn components(&self) -> impl Iterator<Item = &T> {
        self.prefix
            .iter()
            .chain(self.tail.iter())
            .chain(self.growth.iter().flatten())
    }

    pub fn map<U: Growable>(&self, f: impl Fn(&T) -> U) -> LevelSeq<U> {
        LevelSeq {
            prefix: self.prefix.iter().map(&f).collect(),
            tail: self.tail.iter().map(&f).collect(),
            growth: self.growth.as_ref().map(|g| g.iter().map(&f).collect()),
        }
    }
}

pub type RateSeq = LevelSeq<f64>;
pub type MatrixSeq = LevelSeq<DMatrix<f64>>;

impl RateSeq {
    /// Asymptotic increase per level at `n` (zero inside the prefix and for
    /// periodic tails).
    pub fn slope_per_level(&self, n: usize) -> f64 {
        match (self.slot(n), &self.growth) {
            (Slot::Tail { phase, .. }, Some(g)) => g[phase] / self.period() as f64,
            _ => 0.0,
        }
    }
}

impl MatrixSeq {
    /// Single entry of the level-`n` matrix without materialising it.
    pub fn entry(&self, n: usize, row: usize, col: usize) -> f64 {
        match self.slot(n) {
            Slot::Prefix(i) => self.prefix[i][(row, col)],
            Slot::Tail { phase, block } => {
                let base = self.tail[phase][(row, col)];
                match &self.growth {
                    None => base,
                    Some(g) => base + block as f64 * g[phase][(row, col)],
                }
            }
        }
    }
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Start and period of the tail shared by several families.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Tail {
    pub start: usize,
    pub period: usize,
}

impl Tail {
    pub fn merge(self, other: Tail) -> Tail {
        Tail {
            start: self.start.max(other.start),
            period: self.period / gcd(self.period, other.period) * other.period,
        }
    }

    /// Smallest level with the same tail behaviour as `n`.
    pub fn representative(&self, n: usize) -> usize {
        if n < self.start {
            n
        } else {
            self.start + (n - self.start) % self.period
        }
    }

    pub fn of<T: Growable>(seq: &LevelSeq<T>) -> Tail {
        Tail {
            start: seq.tail_start(),
            period: seq.period(),
        }
    }
}
