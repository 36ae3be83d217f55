use std::io::Write;

use rand_distr::{Distribution, StandardNormal};

use super::sampler::{FbmPath, FgnSampler, SeedRecord};
use super::HurstParameter;
use crate::error::{Error, Result};
use crate::grid::UniformGrid;
use crate::rng;

/// Driving noise of one Monte Carlo replica.
///
/// The fBm enters only through its increments on the slow grid
/// (`steps x m`, component-major within a step). The Brownian motion driving
/// the fast variable lives on a uniform subgrid with `n_sub` substeps per
/// slow step (`steps * n_sub x dy`). The two are drawn from disjoint streams.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseBundle {
    grid: UniformGrid,
    hurst: HurstParameter,
    m: usize,
    dy: usize,
    n_sub: usize,
    fbm: Vec<f64>,
    bm: Vec<f64>,
    seed: SeedRecord,
}

impl NoiseBundle {
    /// Assembles a bundle from explicit increments. Mostly useful in tests.
    pub fn from_parts(
        grid: UniformGrid,
        hurst: HurstParameter,
        m: usize,
        dy: usize,
        n_sub: usize,
        fbm: Vec<f64>,
        bm: Vec<f64>,
    ) -> Result<Self> {
        if n_sub == 0 {
            return Err(Error::domain(
                "noise bundle needs at least one fast substep",
            ));
        }
        if fbm.len() != grid.steps() * m || bm.len() != grid.steps() * n_sub * dy {
            return Err(Error::domain(
                "noise increments do not match the grid shape",
            ));
        }
        Ok(Self {
            grid,
            hurst,
            m,
            dy,
            n_sub,
            fbm,
            bm,
            seed: SeedRecord { seed: 0, path: 0 },
        })
    }

    pub fn grid(&self) -> &UniformGrid {
        &self.grid
    }

    pub fn hurst(&self) -> HurstParameter {
        self.hurst
    }

    pub fn dim_fbm(&self) -> usize {
        self.m
    }

    pub fn dim_bm(&self) -> usize {
        self.dy
    }

    pub fn substeps(&self) -> usize {
        self.n_sub
    }

    pub fn seed(&self) -> SeedRecord {
        self.seed
    }

    /// Step of the fast subgrid.
    pub fn fast_step(&self) -> f64 {
        self.grid.step() / self.n_sub as f64
    }

    /// fBm increment `W^H_{t_{k+1}} - W^H_{t_k}` (all components).
    pub fn fbm_increment(&self, k: usize) -> &[f64] {
        &self.fbm[k * self.m..(k + 1) * self.m]
    }

    /// Brownian sub-increments within slow step `k`, `n_sub x dy`.
    pub fn bm_increments(&self, k: usize) -> &[f64] {
        let w = self.n_sub * self.dy;
        &self.bm[k * w..(k + 1) * w]
    }

    pub fn fbm_increments(&self) -> &[f64] {
        &self.fbm
    }

    pub fn bm_all(&self) -> &[f64] {
        &self.bm
    }

    /// One scalar fBm component as a path on the slow grid.
    pub fn fbm_path(&self, component: usize) -> Result<FbmPath> {
        if component >= self.m {
            return Err(Error::domain(format!(
                "fBm component {component} out of range (m = {})",
                self.m
            )));
        }
        let inc: Vec<f64> = self
            .fbm
            .iter()
            .skip(component)
            .step_by(self.m)
            .copied()
            .collect();
        Ok(FbmPath::from_increments(
            self.grid, &inc, self.hurst, self.seed,
        ))
    }

    /// Aggregates increments onto a coarser slow grid with `steps` steps and
    /// `n_sub` substeps per slow step. Both the slow and the fast grid of the
    /// result must be coarsenings of the current ones, so the aggregated noise
    /// is an exact sample on the coarse grids and shares its randomness with
    /// the original (common random numbers).
    pub fn coarsen(&self, steps: usize, n_sub: usize) -> Result<Self> {
        let old = self.grid.steps();
        if steps == 0 || n_sub == 0 || !old.is_multiple_of(steps) {
            return Err(Error::domain(format!(
                "cannot coarsen {old} slow steps to {steps} (with {n_sub} substeps)"
            )));
        }
        let factor = old / steps;
        let fine_per_new = factor * self.n_sub;
        if !fine_per_new.is_multiple_of(n_sub) {
            return Err(Error::domain(format!(
                "fast subgrid of {fine_per_new} cells per coarse step does not split into {n_sub} substeps"
            )));
        }
        let group = fine_per_new / n_sub;
        let grid = self.grid.coarsen(factor)?;

        let mut fbm = vec![0.0; steps * self.m];
        for k in 0..steps {
            for j in 0..self.m {
                let mut s = 0.0;
                for q in 0..factor {
                    s += self.fbm[(k * factor + q) * self.m + j];
                }
                fbm[k * self.m + j] = s;
            }
        }

        let total = steps * n_sub;
        let mut bm = vec![0.0; total * self.dy];
        for c in 0..total {
            for i in 0..self.dy {
                let mut s = 0.0;
                for q in 0..group {
                    s += self.bm[(c * group + q) * self.dy + i];
                }
                bm[c * self.dy + i] = s;
            }
        }
        Ok(Self {
            grid,
            hurst: self.hurst,
            m: self.m,
            dy: self.dy,
            n_sub,
            fbm,
            bm,
            seed: self.seed,
        })
    }
}

/// Reusable generator of [`NoiseBundle`]s for a fixed grid and seed.
#[derive(Debug, Clone)]
pub struct NoiseSource {
    grid: UniformGrid,
    hurst: HurstParameter,
    m: usize,
    dy: usize,
    n_sub: usize,
    seed: u64,
    sampler: FgnSampler,
}

impl NoiseSource {
    pub fn new(
        grid: UniformGrid,
        hurst: HurstParameter,
        m: usize,
        dy: usize,
        n_sub: usize,
        seed: u64,
    ) -> Result<Self> {
        if n_sub == 0 {
            return Err(Error::domain(
                "noise source needs at least one fast substep",
            ));
        }
        if m == 0 || m as u64 > rng::TAGS_PER_PATH - rng::TAG_FBM_BASE {
            return Err(Error::domain(format!("too many fBm components: {m}")));
        }
        let sampler = FgnSampler::new(grid.steps(), hurst, grid.step())?;
        Ok(Self {
            grid,
            hurst,
            m,
            dy,
            n_sub,
            seed,
            sampler,
        })
    }

    pub fn grid(&self) -> &UniformGrid {
        &self.grid
    }

    pub fn substeps(&self) -> usize {
        self.n_sub
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Noise of replica `path`. Pure in `(seed, path)`.
    pub fn bundle(&self, path: u64) -> NoiseBundle {
        let n = self.grid.steps();
        let mut fbm = vec![0.0; n * self.m];
        let mut comp = vec![0.0; n];
        for j in 0..self.m {
            let mut r = rng::stream(self.seed, path, rng::TAG_FBM_BASE + j as u64);
            self.sampler.sample_into(&mut r, &mut comp);
            for (k, v) in comp.iter().enumerate() {
                fbm[k * self.m + j] = *v;
            }
        }
        let sd = (self.grid.step() / self.n_sub as f64).sqrt();
        let mut r = rng::stream(self.seed, path, rng::TAG_BM);
        let bm: Vec<f64> = (0..n * self.n_sub * self.dy)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut r);
                z * sd
            })
            .collect();
        NoiseBundle {
            grid: self.grid,
            hurst: self.hurst,
            m: self.m,
            dy: self.dy,
            n_sub: self.n_sub,
            fbm,
            bm,
            seed: SeedRecord {
                seed: self.seed,
                path,
            },
        }
    }
}

/// Writes the fBm components of `noise` as CSV `t,w1,...,wm`.
pub fn write_fbm_csv<W: Write>(noise: &NoiseBundle, mut out: W) -> Result<()> {
    let m = noise.dim_fbm();
    let mut header = String::from("t");
    for j in 1..=m {
        header.push_str(&format!(",w{j}"));
    }
    writeln!(out, "{header}")?;
    let mut acc = vec![0.0; m];
    for k in 0..=noise.grid.steps() {
        if k > 0 {
            for (a, d) in acc.iter_mut().zip(noise.fbm_increment(k - 1)) {
                *a += d;
            }
        }
        let mut line = format!("{}", noise.grid.time(k));
        for a in &acc {
            line.push_str(&format!(",{a}"));
        }
        writeln!(out, "{line}")?;
    }
    Ok(())
}
