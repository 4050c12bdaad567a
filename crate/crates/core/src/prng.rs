//! Counter-based random streams keyed by `(master_seed, labels)`.
//!
//! A [`StreamKey`] is hashed into a 64-bit stream key `k`. Output number `i`
//! (starting at 1) of the stream is `mix(k + i·G)` where `G = 0x9E3779B97F4A7C15`
//! and `mix` is the SplitMix64 finalizer. Nothing is shared between streams, so
//! the values an experiment cell sees never depend on which thread ran it or
//! in which order cells were scheduled.
//!
//! Uniforms use the top 53 bits of an output. Standard normals use the
//! Box–Muller transform on two consecutive uniforms `u1, u2`:
//! `r = sqrt(-2 ln(1 - u1))`, `z0 = r cos(2π u2)`, `z1 = r sin(2π u2)`; `z0` is
//! returned first and `z1` is kept for the next call.

use std::fmt;

use serde::{Deserialize, Serialize};

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[inline]
fn absorb(h: u64, word: u64) -> u64 {
    mix64(h ^ mix64(word.wrapping_add(GOLDEN)))
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Label {
    Int(u64),
    Str(String),
}

impl From<&str> for Label {
    fn from(s: &str) -> Self {
        Label::Str(s.to_owned())
    }
}

impl From<String> for Label {
    fn from(s: String) -> Self {
        Label::Str(s)
    }
}

macro_rules! int_label {
    ($($t:ty),*) => {$(
        impl From<$t> for Label {
            fn from(v: $t) -> Self {
                Label::Int(v as u64)
            }
        }
    )*};
}
int_label!(u8, u16, u32, u64, usize);

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Label::Int(v) => write!(f, "{v}"),
            Label::Str(s) => f.write_str(s),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StreamKey {
    pub master_seed: u64,
    pub labels: Vec<Label>,
}

impl StreamKey {
    pub fn new(master_seed: u64) -> Self {
        Self {
            master_seed,
            labels: Vec::new(),
        }
    }

    /// Returns a child key with one more label appended.
    pub fn with(&self, label: impl Into<Label>) -> Self {
        let mut k = self.clone();
        k.labels.push(label.into());
        k
    }

    fn hash(&self) -> u64 {
        let mut h = absorb(0x6772_6f6b_6c61_6221, self.master_seed);
        for label in &self.labels {
            match label {
                Label::Int(v) => {
                    h = absorb(h, 1);
                    h = absorb(h, *v);
                }
                Label::Str(s) => {
                    h = absorb(h, 2);
                    h = absorb(h, s.len() as u64);
                    for chunk in s.as_bytes().chunks(8) {
                        let mut buf = [0u8; 8];
                        buf[..chunk.len()].copy_from_slice(chunk);
                        h = absorb(h, u64::from_le_bytes(buf));
                    }
                }
            }
        }
        h
    }

    pub fn stream(&self) -> Stream {
        Stream {
            key: self.hash(),
            counter: 0,
            spare: None,
        }
    }
}

impl fmt::Display for StreamKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.master_seed)?;
        for l in &self.labels {
            write!(f, "/{l}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Stream {
    key: u64,
    counter: u64,
    spare: Option<f64>,
}

impl Stream {
    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(1);
        mix64(self.key.wrapping_add(self.counter.wrapping_mul(GOLDEN)))
    }

    /// Uniform on `[0, 1)` with 53 bits of resolution.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn standard_normal(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let (s, c) = (std::f64::consts::TAU * u2).sin_cos();
        self.spare = Some(r * s);
        r * c
    }

    pub fn normal(&mut self, mean: f64, std: f64) -> f64 {
        mean + std * self.standard_normal()
    }

    pub fn normals(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.standard_normal()).collect()
    }

    /// Uniform integer in `[0, n)`, unbiased by rejection.
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "below(0)");
        let zone = u64::MAX - (u64::MAX % n);
        loop {
            let v = self.next_u64();
            if v < zone {
                return v % n;
            }
        }
    }

    /// Fisher–Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i as u64 + 1) as usize;
            items.swap(i, j);
        }
    }
}
