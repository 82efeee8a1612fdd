use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{eigensolve, linearize, ModalResult, ModeClass, DEFAULT_STEP};
use crate::error::{Error, Result};
use crate::grid::NetworkCase;
use crate::pss::PssConfig;
use crate::system::{initialize, with_uniform_pss, SystemOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    Beta1,
    Beta2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub param: SweepParam,
    pub grid: Vec<f64>,
    /// Value of the parameter that is not swept.
    pub fixed_other: f64,
    pub gain_k: f64,
    /// Filter settings shared by every unit; betas and gain are overwritten.
    #[serde(default)]
    pub template: PssConfig,
    /// Bisection depth allowed when tracking between grid points.
    #[serde(default = "default_depth")]
    pub max_refine: u32,
    /// Highest frequency of tracked modes, Hz.
    #[serde(default = "default_fmax")]
    pub track_fmax: f64,
}

fn default_depth() -> u32 {
    6
}
fn default_fmax() -> f64 {
    3.0
}

impl SweepSpec {
    pub fn new(param: SweepParam, grid: Vec<f64>, fixed_other: f64, gain_k: f64) -> Self {
        Self {
            param,
            grid,
            fixed_other,
            gain_k,
            template: PssConfig::default(),
            max_refine: default_depth(),
            track_fmax: default_fmax(),
        }
    }

    pub fn config_at(&self, value: f64) -> PssConfig {
        let (beta1, beta2) = match self.param {
            SweepParam::Beta1 => (value, self.fixed_other),
            SweepParam::Beta2 => (self.fixed_other, value),
        };
        PssConfig { beta1, beta2, gain_k: self.gain_k, ..self.template.clone() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocusPoint {
    pub value: f64,
    pub modes: Vec<ModalResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeTrack {
    /// Classification at the first grid point.
    pub label: ModeClass,
    /// Index into `LocusPoint::modes` per grid point; `None` once lost.
    pub indices: Vec<Option<usize>>,
    /// Set where the continuation could not be resolved.
    pub ambiguous: Vec<bool>,
}

impl ModeTrack {
    pub fn eigenvalues(&self, points: &[LocusPoint]) -> Vec<Option<Complex64>> {
        self.indices.iter().zip(points).map(|(i, p)| i.map(|i| p.modes[i].eigenvalue)).collect()
    }

    /// Number of leading grid points matched without ambiguity.
    pub fn resolved_len(&self) -> usize {
        self.indices.iter().zip(&self.ambiguous).take_while(|(i, &a)| i.is_some() && !a).count()
    }

    pub fn is_complete(&self) -> bool {
        self.indices.iter().all(Option::is_some) && !self.ambiguous.iter().any(|&a| a)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocusTable {
    pub param: SweepParam,
    pub points: Vec<LocusPoint>,
    pub tracks: Vec<ModeTrack>,
    /// Extra evaluations made while bisecting ambiguous intervals.
    pub refinements: usize,
}

impl LocusTable {
    /// Track carrying `label`, preferring complete tracks, then the longest
    /// resolved prefix, then the least damped start.
    pub fn track(&self, label: ModeClass) -> Option<&ModeTrack> {
        self.tracks.iter().filter(|t| t.label == label).max_by(|a, b| {
            let key = |t: &ModeTrack| {
                let re = t.eigenvalues(&self.points)[0].map_or(f64::NEG_INFINITY, |l| l.re);
                (t.is_complete(), t.resolved_len(), re)
            };
            let (ka, kb) = (key(a), key(b));
            ka.0.cmp(&kb.0).then(ka.1.cmp(&kb.1)).then(ka.2.total_cmp(&kb.2))
        })
    }
}

fn tracked(m: &ModalResult, fmax: f64) -> bool {
    m.eigenvalue.im > 0.0 && m.frequency_hz <= fmax
}

/// Match each eigenvalue of `from` to `to`. Each search radius is half the
/// distance from the eigenvalue to its nearest neighbor in `from`; a match
/// must be the only candidate in that radius and must not be claimed twice.
fn match_step(from: &[Complex64], to: &[Complex64], which: &[usize]) -> Vec<Option<usize>> {
    let mut out: Vec<Option<usize>> = which
        .iter()
        .map(|&i| {
            let l = from[i];
            let radius = 0.5
                * from.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, m)| (l - m).norm()).fold(f64::INFINITY, f64::min);
            let cands: Vec<usize> = (0..to.len()).filter(|&j| (to[j] - l).norm() < radius).collect();
            (cands.len() == 1).then(|| cands[0])
        })
        .collect();
    for a in 0..out.len() {
        for b in a + 1..out.len() {
            if out[a].is_some() && out[a] == out[b] {
                out[a] = None;
                out[b] = None;
            }
        }
    }
    out
}

/// Continue the modes `which` of `from` to `to`, bisecting the parameter
/// interval when a step is ambiguous.
fn continue_modes<F>(
    from: &[Complex64],
    to: &[Complex64],
    which: &[usize],
    lo: f64,
    hi: f64,
    depth: u32,
    eval: &F,
    refinements: &mut usize,
) -> Result<Vec<Option<usize>>>
where
    F: Fn(f64) -> Result<Vec<Complex64>>,
{
    let direct = match_step(from, to, which);
    if direct.iter().all(Option::is_some) || depth == 0 {
        return Ok(direct);
    }
    let mid = 0.5 * (lo + hi);
    let mid_vals = eval(mid)?;
    *refinements += 1;
    let first = continue_modes(from, &mid_vals, which, lo, mid, depth - 1, eval, refinements)?;
    let mut out = direct.clone();
    let pending: Vec<(usize, usize)> =
        first.iter().enumerate().filter_map(|(k, m)| m.map(|m| (k, m))).filter(|&(k, _)| direct[k].is_none()).collect();
    if pending.is_empty() {
        return Ok(out);
    }
    let mids: Vec<usize> = pending.iter().map(|&(_, m)| m).collect();
    let second = continue_modes(&mid_vals, to, &mids, mid, hi, depth - 1, eval, refinements)?;
    for ((k, _), m) in pending.iter().zip(second) {
        out[*k] = m;
    }
    Ok(out)
}

/// Track modes across computed locus points. `eval` recomputes the
/// eigenvalues at an intermediate parameter value for bisection.
pub fn track_modes<F>(points: &[LocusPoint], fmax: f64, max_refine: u32, eval: F) -> Result<(Vec<ModeTrack>, usize)>
where
    F: Fn(f64) -> Result<Vec<Complex64>>,
{
    let Some(first) = points.first() else {
        return Ok((Vec::new(), 0));
    };
    let start: Vec<usize> = (0..first.modes.len()).filter(|&i| tracked(&first.modes[i], fmax)).collect();
    let mut tracks: Vec<ModeTrack> = start
        .iter()
        .map(|&i| ModeTrack {
            label: first.modes[i].classification,
            indices: vec![Some(i)],
            ambiguous: vec![false],
        })
        .collect();
    let mut refinements = 0;
    for w in points.windows(2) {
        let from: Vec<Complex64> = w[0].modes.iter().map(|m| m.eigenvalue).collect();
        let to: Vec<Complex64> = w[1].modes.iter().map(|m| m.eigenvalue).collect();
        let live: Vec<(usize, usize)> =
            tracks.iter().enumerate().filter_map(|(t, tr)| tr.indices.last().copied().flatten().map(|i| (t, i))).collect();
        let which: Vec<usize> = live.iter().map(|&(_, i)| i).collect();
        let matched = continue_modes(&from, &to, &which, w[0].value, w[1].value, max_refine, &eval, &mut refinements)?;
        let mut got = vec![None; tracks.len()];
        for (&(t, _), m) in live.iter().zip(matched) {
            got[t] = Some(m);
        }
        for (t, tr) in tracks.iter_mut().enumerate() {
            match got[t] {
                Some(Some(j)) => {
                    tr.indices.push(Some(j));
                    tr.ambiguous.push(false);
                }
                Some(None) => {
                    tr.indices.push(None);
                    tr.ambiguous.push(true);
                }
                None => {
                    tr.indices.push(None);
                    tr.ambiguous.push(false);
                }
            }
        }
    }
    Ok((tracks, refinements))
}

fn modes_at(case: &NetworkCase, cfg: &PssConfig, opts: &SystemOptions) -> Result<Vec<ModalResult>> {
    let case = with_uniform_pss(case, Some(cfg));
    let init = initialize(&case, opts)?;
    let model = linearize(&init.system, &init.x0, &init.workspace, DEFAULT_STEP)?;
    eigensolve(&model)
}

/// Root-locus sweep of one stabilizer parameter with every unit tuned alike.
/// Grid points are evaluated in parallel and merged in grid order.
pub fn beta_sweep(case: &NetworkCase, spec: &SweepSpec, opts: &SystemOptions) -> Result<LocusTable> {
    if spec.grid.is_empty() {
        return Err(Error::Domain("sweep grid is empty".into()));
    }
    if spec.grid.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::Domain("sweep values must lie in [0, 1]".into()));
    }
    let points: Vec<LocusPoint> = spec
        .grid
        .par_iter()
        .map(|&value| Ok(LocusPoint { value, modes: modes_at(case, &spec.config_at(value), opts)? }))
        .collect::<Result<_>>()?;
    let eval = |v: f64| -> Result<Vec<Complex64>> {
        Ok(modes_at(case, &spec.config_at(v), opts)?.into_iter().map(|m| m.eigenvalue).collect())
    };
    let (tracks, refinements) = track_modes(&points, spec.track_fmax, spec.max_refine, eval)?;
    Ok(LocusTable { param: spec.param, points, tracks, refinements })
}
