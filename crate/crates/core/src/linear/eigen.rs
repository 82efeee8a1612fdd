use std::f64::consts::PI;

use nalgebra::linalg::balancing::balance_parlett_reinsch;
use nalgebra::{DMatrix, DVector, Schur};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::LinearModel;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeClass {
    FrequencyRegulation,
    InterArea,
    Local,
    Control,
    Other,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModalResult {
    #[serde(with = "complex_pair")]
    pub eigenvalue: Complex64,
    pub frequency_hz: f64,
    pub damping_ratio: f64,
    /// Right-eigenvector components on the machine speeds, scaled so the
    /// largest is exactly 1.
    #[serde(with = "complex_list")]
    pub mode_shape: Vec<Complex64>,
    /// Machine ids matching `mode_shape`.
    pub machines: Vec<usize>,
    pub areas: Vec<u32>,
    /// Share of participation carried by rotor angle and speed states.
    pub electromechanical: f64,
    pub residual: f64,
    pub classification: ModeClass,
}

mod complex_pair {
    use num_complex::Complex64;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    struct Pair {
        re: f64,
        im: f64,
    }

    pub fn serialize<S: Serializer>(c: &Complex64, s: S) -> Result<S::Ok, S::Error> {
        Pair { re: c.re, im: c.im }.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Complex64, D::Error> {
        let p = Pair::deserialize(d)?;
        Ok(Complex64::new(p.re, p.im))
    }
}

mod complex_list {
    use num_complex::Complex64;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[Complex64], s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(v.iter().map(|c| [c.re, c.im]))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Complex64>, D::Error> {
        let raw: Vec<[f64; 2]> = Vec::deserialize(d)?;
        Ok(raw.into_iter().map(|[re, im]| Complex64::new(re, im)).collect())
    }
}

/// Solve `(M - shift I) v = b` repeatedly, normalizing each time.
fn inverse_iteration(m: &DMatrix<Complex64>, shift: Complex64) -> Option<DVector<Complex64>> {
    let n = m.nrows();
    let mut shifted = m.clone();
    for i in 0..n {
        shifted[(i, i)] -= shift;
    }
    let lu = shifted.lu();
    // Deterministic start with all components excited.
    let mut v = DVector::from_fn(n, |i, _| Complex64::new(1.0 + 0.1 * i as f64, 0.3 - 0.01 * i as f64));
    for _ in 0..4 {
        let next = lu.solve(&v)?;
        let norm = next.norm();
        if !norm.is_finite() || norm == 0.0 {
            return None;
        }
        v = next / Complex64::new(norm, 0.0);
    }
    Some(v)
}

fn shift_for(lambda: Complex64, scale: f64) -> Complex64 {
    let eps = 1e-13 * scale.max(lambda.norm()).max(1.0);
    lambda + Complex64::new(eps, 0.5 * eps)
}

/// All eigenpairs of `A` with speed mode shapes and a classification.
///
/// Eigenvalues come from a real Schur decomposition; right and left
/// eigenvectors from complex inverse iteration, after which each eigenvalue
/// is refined to the least-squares Rayleigh quotient of its right vector.
pub fn eigensolve(model: &LinearModel) -> Result<Vec<ModalResult>> {
    let a = &model.a;
    let n = a.nrows();
    if a.iter().any(|x| !x.is_finite()) {
        return Err(Error::Eigen("system matrix has non-finite entries".into()));
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    let mut balanced = a.clone();
    balance_parlett_reinsch(&mut balanced);
    // Deflation can stall at machine epsilon on badly scaled models; each
    // pair is polished by inverse iteration afterwards.
    let schur = [f64::EPSILON, 1e-14, 1e-13, 1e-12]
        .into_iter()
        .find_map(|eps| Schur::try_new(balanced.clone(), eps, 20_000))
        .ok_or_else(|| {
            Error::Eigen(format!("Schur iteration did not converge (dimension {n}, max |a_ij| {:.3e})", a.amax()))
        })?;
    // Nearly repeated real roots can come back with a NaN imaginary part.
    let mut lambdas: Vec<Complex64> = schur
        .complex_eigenvalues()
        .iter()
        .map(|l| if l.im.is_nan() { Complex64::new(l.re, 0.0) } else { *l })
        .collect();
    if lambdas.iter().any(|l| !l.re.is_finite()) {
        return Err(Error::Eigen("Schur form produced non-finite eigenvalues".into()));
    }
    lambdas.sort_by(|x, y| x.im.total_cmp(&y.im).then(x.re.total_cmp(&y.re)));

    let ac: DMatrix<Complex64> = a.map(|x| Complex64::new(x, 0.0));
    let ah = ac.adjoint();
    let scale = a.amax();
    let speeds: Vec<usize> = model.machines.iter().map(|m| m.omega).collect();
    let em_states: Vec<usize> = model.machines.iter().flat_map(|m| [m.delta, m.omega]).collect();

    let mut out = Vec::with_capacity(n);
    for &lambda0 in &lambdas {
        let v = inverse_iteration(&ac, shift_for(lambda0, scale))
            .ok_or_else(|| Error::Eigen(format!("inverse iteration failed at {lambda0}")))?;
        let av = &ac * &v;
        let rayleigh = v.dotc(&av) / v.dotc(&v);
        let res_of = |l: Complex64| (&av - &v * l).norm() / v.norm();
        let (lambda, residual) =
            [rayleigh, lambda0].into_iter().map(|l| (l, res_of(l))).min_by(|x, y| x.1.total_cmp(&y.1)).unwrap_or((lambda0, f64::NAN));
        let w = inverse_iteration(&ah, shift_for(lambda.conj(), scale))
            .ok_or_else(|| Error::Eigen(format!("left inverse iteration failed at {lambda}")))?;
        let part: Vec<f64> = (0..n).map(|i| (w[i].conj() * v[i]).norm()).collect();
        let total: f64 = part.iter().sum();
        let electromechanical =
            if total > 0.0 { em_states.iter().map(|&i| part[i]).sum::<f64>() / total } else { 0.0 };

        let mut shape: Vec<Complex64> = speeds.iter().map(|&i| v[i]).collect();
        if let Some(pivot) = shape.iter().copied().max_by(|x, y| x.norm().total_cmp(&y.norm())) {
            if pivot.norm() > 0.0 {
                for s in &mut shape {
                    *s /= pivot;
                }
            }
        }
        let frequency_hz = lambda.im.abs() / (2.0 * PI);
        let damping_ratio = if lambda.norm() > 0.0 { -lambda.re / lambda.norm() } else { 0.0 };
        out.push(ModalResult {
            eigenvalue: lambda,
            frequency_hz,
            damping_ratio,
            mode_shape: shape,
            machines: model.machines.iter().map(|m| m.id).collect(),
            areas: model.machines.iter().map(|m| m.area).collect(),
            electromechanical,
            residual,
            classification: ModeClass::Other,
        });
    }
    classify_modes(&mut out);
    Ok(out)
}

/// Smallest share of angle/speed participation for an electromechanical mode.
const EM_SHARE: f64 = 0.1;

fn classify(m: &ModalResult) -> ModeClass {
    let lambda = m.eigenvalue;
    if lambda.norm() < 1e-6 {
        return ModeClass::Other;
    }
    if lambda.im.abs() < 1e-9 * lambda.norm().max(1.0) {
        return ModeClass::Control;
    }
    let f = m.frequency_hz;
    let shape = &m.mode_shape;
    if shape.is_empty() {
        return ModeClass::Control;
    }
    if f < 0.1 && m.electromechanical >= EM_SHARE {
        // Phase of every component relative to the pivot, which is real.
        let in_phase = shape.iter().all(|s| s.norm() > 0.0 && s.arg().abs() <= 30f64.to_radians());
        let mut s_sorted: Vec<f64> = shape.iter().map(|s| s.arg()).collect();
        s_sorted.sort_by(f64::total_cmp);
        let spread = s_sorted.last().unwrap() - s_sorted[0];
        if in_phase || spread <= 60f64.to_radians() {
            return ModeClass::FrequencyRegulation;
        }
        return ModeClass::Control;
    }
    if f <= 3.0 && m.electromechanical >= EM_SHARE {
        let mut sums: std::collections::BTreeMap<u32, Complex64> = std::collections::BTreeMap::new();
        for (s, &area) in shape.iter().zip(&m.areas) {
            *sums.entry(area).or_default() += s;
        }
        let groups: Vec<Complex64> = sums.into_values().filter(|s| s.norm() >= 0.25).collect();
        let anti = groups.iter().enumerate().any(|(i, a)| {
            groups[i + 1..].iter().any(|b| {
                let d = (a / b).arg().abs();
                d >= 120f64.to_radians()
            })
        });
        return if anti { ModeClass::InterArea } else { ModeClass::Local };
    }
    ModeClass::Control
}

/// Assign a classification to every result in place.
pub fn classify_modes(results: &mut [ModalResult]) {
    for m in results.iter_mut() {
        m.classification = classify(m);
    }
}
