//! Per-obstacle data buffer with variance-thresholded selection.
//!
//! Anchors of a new scan are visited in order. An anchor's whole offset group
//! is stored only if the predictive variance at its surface point, under the
//! posterior of everything stored so far, exceeds η; the posterior is then
//! refreshed before the next anchor is considered.

use std::io::Write;

use nalgebra::DMatrix;

use crate::blr::Posterior;
use crate::dataset::{Sample, SurfaceDataset};
use crate::error::{Error, Result};
use crate::feature_net::FeatureNet;

/// Row cap per obstacle.
pub const DEFAULT_CAPACITY: usize = 5000;

/// η = 2σ².
pub fn default_eta(sigma: f64) -> f64 {
    2.0 * sigma * sigma
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BufferUpdate {
    pub accepted: usize,
    pub rejected: usize,
    /// Informative anchors dropped because the cap was reached.
    pub over_capacity: usize,
}

impl BufferUpdate {
    pub fn capacity_exceeded(&self) -> bool {
        self.over_capacity > 0
    }

    /// `Err(CapacityExceeded)` if any anchor was dropped at the cap.
    pub fn check(&self, cap: usize) -> Result<()> {
        if self.capacity_exceeded() {
            Err(Error::CapacityExceeded { cap })
        } else {
            Ok(())
        }
    }
}

#[derive(Debug, Clone)]
pub struct Buffer {
    prior: Posterior,
    posterior: Posterior,
    data: SurfaceDataset,
    eta: f64,
    cap: usize,
    next_anchor: usize,
}

impl Buffer {
    pub fn new(prior: Posterior, eta: f64, cap: usize) -> Result<Self> {
        if !(eta >= 0.0) {
            return Err(Error::ConfigInvalid(format!("η must be ≥ 0, got {eta}")));
        }
        Ok(Buffer {
            posterior: prior.clone(),
            prior,
            data: SurfaceDataset::default(),
            eta,
            cap,
            next_anchor: 0,
        })
    }

    pub fn prior(&self) -> &Posterior {
        &self.prior
    }

    pub fn posterior(&self) -> &Posterior {
        &self.posterior
    }

    pub fn data(&self) -> &SurfaceDataset {
        &self.data
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn cap(&self) -> usize {
        self.cap
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Runs selection over the anchor groups of `scan`.
    pub fn update(&mut self, scan: &SurfaceDataset, net: &FeatureNet) -> Result<BufferUpdate> {
        let mut report = BufferUpdate::default();
        if scan.is_empty() {
            return Ok(report);
        }
        let feats = net.forward_batch(&scan.inputs());
        let sigma2 = self.posterior.sigma().powi(2);
        let mut start = 0;
        for group in scan.anchor_groups() {
            let n = group.len();
            let cols = start..start + n;
            start += n;
            let surface = group.iter().position(|s| s.y == 0.0).unwrap_or(0);
            let phi0 = feats.column(cols.start + surface).into_owned();
            let var = sigma2 * (1.0 + self.posterior.inv_quad_form(&phi0));
            if !(var > self.eta) {
                report.rejected += 1;
                continue;
            }
            if self.data.len() + n > self.cap {
                if report.over_capacity == 0 {
                    log::warn!("buffer cap of {} rows reached; skipping further anchors", self.cap);
                }
                report.over_capacity += 1;
                continue;
            }
            let block: DMatrix<f64> = feats.columns(cols.start, n).into_owned();
            let ys: Vec<f64> = group.iter().map(|s| s.y).collect();
            self.posterior = self.posterior.update_with_features(&block, &ys)?;
            let anchor = self.next_anchor;
            self.next_anchor += 1;
            self.data
                .samples
                .extend(group.iter().map(|s| Sample { anchor, ..*s }));
            report.accepted += 1;
        }
        Ok(report)
    }

    /// The posterior re-derived in one batch from the prior and every stored
    /// row.
    pub fn rebuild_posterior(&self, net: &FeatureNet) -> Result<Posterior> {
        self.prior.update(&self.data.pairs(), net)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> std::io::Result<()> {
        self.data.write_csv(w)
    }
}

/// Functional form of [`Buffer::update`].
pub fn update_buffer(
    buf: &Buffer,
    scan: &SurfaceDataset,
    net: &FeatureNet,
) -> Result<(Buffer, Posterior, BufferUpdate)> {
    let mut next = buf.clone();
    let report = next.update(scan, net)?;
    let post = next.posterior.clone();
    Ok((next, post, report))
}
