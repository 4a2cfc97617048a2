//! Jump intensity and jump-size law.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, RngCore};
use rand_distr::{Distribution, StandardNormal};

use super::JumpError;
use crate::market_model::{ScalarSpec, VectorSpec};

/// One node of the Lévy measure: `nu(dx) ~ sum weight * delta_x`.
#[derive(Clone, Debug, PartialEq)]
pub struct JumpAtom {
    pub weight: f64,
    pub x: DVector<f64>,
}

/// Draws a jump vector at `(t, kappa)`.
pub type JumpSampler = Arc<dyn Fn(f64, &[f64], &mut dyn RngCore) -> DVector<f64> + Send + Sync>;
/// Quadrature of the jump-size distribution at `(t, kappa)`; weights sum to one.
pub type MomentRule = Arc<dyn Fn(f64, &[f64]) -> Vec<JumpAtom> + Send + Sync>;

#[derive(Clone)]
pub enum SizeLaw {
    /// Finitely many sizes with fixed probabilities.
    Atoms(Vec<(f64, VectorSpec)>),
    /// `x^i = exp(mean_i + loading_i Z) - 1` with `Z` standard normal;
    /// integrals use Gauss-Hermite quadrature with `nodes` points.
    OneFactorLogNormal {
        mean: DVector<f64>,
        loading: DVector<f64>,
        nodes: usize,
    },
    /// Arbitrary sampler. Without `moments` the compensator is unknown and
    /// the drift cannot be formed.
    Custom {
        sampler: JumpSampler,
        moments: Option<MomentRule>,
    },
}

impl fmt::Debug for SizeLaw {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SizeLaw::Atoms(atoms) => f.debug_tuple("Atoms").field(atoms).finish(),
            SizeLaw::OneFactorLogNormal {
                mean,
                loading,
                nodes,
            } => f
                .debug_struct("OneFactorLogNormal")
                .field("mean", mean)
                .field("loading", loading)
                .field("nodes", nodes)
                .finish(),
            SizeLaw::Custom { moments, .. } => f
                .debug_struct("Custom")
                .field("has_moments", &moments.is_some())
                .finish(),
        }
    }
}

/// Nodes and probability weights integrating against the standard normal.
pub fn gauss_hermite(n: usize) -> Vec<(f64, f64)> {
    // Golub-Welsch on the Jacobi matrix of the probabilists' Hermite polynomials.
    let mut j = DMatrix::zeros(n, n);
    for k in 1..n {
        let b = (k as f64).sqrt();
        j[(k - 1, k)] = b;
        j[(k, k - 1)] = b;
    }
    let eig = SymmetricEigen::new(j);
    let mut out: Vec<(f64, f64)> = (0..n)
        .map(|k| (eig.eigenvalues[k], eig.eigenvectors[(0, k)].powi(2)))
        .collect();
    out.sort_by(|a, b| a.0.total_cmp(&b.0));
    out
}

/// Intensity and size law of a quasi-left-continuous jump measure, with
/// calendar time as the clock.
#[derive(Clone, Debug)]
pub struct JumpSpec {
    pub intensity: ScalarSpec,
    /// Thinning bound: `intensity <= lambda_max` everywhere.
    pub lambda_max: f64,
    pub size_law: SizeLaw,
    /// After this many jumps the measure is exhausted.
    pub max_jumps: Option<usize>,
    quadrature: Vec<(f64, f64)>,
}

impl JumpSpec {
    pub fn new(
        intensity: ScalarSpec,
        lambda_max: f64,
        size_law: SizeLaw,
    ) -> Result<Self, JumpError> {
        if !(lambda_max.is_finite() && lambda_max >= 0.0) {
            return Err(JumpError::InvalidSpec(format!(
                "lambda_max must be finite and >= 0, got {lambda_max}"
            )));
        }
        let mut quadrature = Vec::new();
        match &size_law {
            SizeLaw::Atoms(atoms) => {
                if atoms.iter().any(|(p, _)| !(*p >= 0.0)) {
                    return Err(JumpError::InvalidSpec(
                        "atom probabilities must be >= 0".into(),
                    ));
                }
                let total: f64 = atoms.iter().map(|(p, _)| p).sum();
                if !atoms.is_empty() && (total - 1.0).abs() > 1e-12 {
                    return Err(JumpError::InvalidSpec(format!(
                        "atom probabilities sum to {total}"
                    )));
                }
            }
            SizeLaw::OneFactorLogNormal {
                mean,
                loading,
                nodes,
            } => {
                if mean.len() != loading.len() || *nodes == 0 {
                    return Err(JumpError::InvalidSpec(
                        "log-normal law needs matching mean/loading and at least one node".into(),
                    ));
                }
                quadrature = gauss_hermite(*nodes);
            }
            SizeLaw::Custom { .. } => {}
        }
        Ok(Self {
            intensity,
            lambda_max,
            size_law,
            max_jumps: None,
            quadrature,
        })
    }

    /// The empty jump measure.
    pub fn none() -> Self {
        Self::new(0.0.into(), 0.0, SizeLaw::Atoms(Vec::new())).expect("valid")
    }

    pub fn with_max_jumps(mut self, n: usize) -> Self {
        self.max_jumps = Some(n);
        self
    }

    /// No jumps can ever happen.
    pub fn is_silent(&self) -> bool {
        self.lambda_max == 0.0 || self.max_jumps == Some(0)
    }

    /// Intensity at `(t, kappa)` after `jumps` jumps.
    pub fn intensity_at(&self, t: f64, kappa: &[f64], jumps: usize) -> Result<f64, JumpError> {
        if self.max_jumps.is_some_and(|m| jumps >= m) {
            return Ok(0.0);
        }
        let lam = self.intensity.eval(t, kappa)?;
        if !(lam >= 0.0) || lam > self.lambda_max * (1.0 + 1e-12) {
            return Err(JumpError::IntensityExceedsBound {
                t,
                value: lam,
                bound: self.lambda_max,
            });
        }
        Ok(lam)
    }

    /// Discretized compensator density at `(t, kappa)`: atoms whose weights
    /// already include the intensity. Zero-size atoms are dropped. Returns the
    /// intensity.
    pub fn compensator_into(
        &self,
        t: f64,
        kappa: &[f64],
        jumps: usize,
        out: &mut Vec<JumpAtom>,
    ) -> Result<f64, JumpError> {
        out.clear();
        let lam = self.intensity_at(t, kappa, jumps)?;
        if lam == 0.0 {
            return Ok(0.0);
        }
        let d = kappa.len();
        match &self.size_law {
            SizeLaw::Atoms(atoms) => {
                for (p, size) in atoms {
                    if *p > 0.0 {
                        let x = size.eval(t, kappa)?;
                        if x.iter().any(|&v| v != 0.0) {
                            out.push(JumpAtom { weight: lam * p, x });
                        }
                    }
                }
            }
            SizeLaw::OneFactorLogNormal { mean, loading, .. } => {
                check_len(mean.len(), d)?;
                for &(z, w) in &self.quadrature {
                    let x = DVector::from_fn(d, |i, _| (mean[i] + loading[i] * z).exp_m1());
                    out.push(JumpAtom { weight: lam * w, x });
                }
            }
            SizeLaw::Custom { moments, .. } => {
                let rule = moments.as_ref().ok_or(JumpError::CompensatorUnavailable)?;
                for atom in rule(t, kappa) {
                    check_len(atom.x.len(), d)?;
                    if atom.weight > 0.0 && atom.x.iter().any(|&v| v != 0.0) {
                        out.push(JumpAtom {
                            weight: lam * atom.weight,
                            x: atom.x,
                        });
                    }
                }
            }
        }
        Ok(lam)
    }

    pub fn compensator(
        &self,
        t: f64,
        kappa: &[f64],
        jumps: usize,
    ) -> Result<Vec<JumpAtom>, JumpError> {
        let mut out = Vec::new();
        self.compensator_into(t, kappa, jumps, &mut out)?;
        Ok(out)
    }

    /// Fails early when integrals against the jump law are unavailable.
    pub fn check_compensator(&self) -> Result<(), JumpError> {
        match &self.size_law {
            SizeLaw::Custom { moments: None, .. } if !self.is_silent() => {
                Err(JumpError::CompensatorUnavailable)
            }
            _ => Ok(()),
        }
    }

    /// Draws a jump size at `(t, kappa)` and checks it.
    pub fn sample<R: Rng>(
        &self,
        t: f64,
        kappa: &[f64],
        rng: &mut R,
    ) -> Result<DVector<f64>, JumpError> {
        let d = kappa.len();
        let x = match &self.size_law {
            SizeLaw::Atoms(atoms) if atoms.is_empty() => DVector::zeros(d),
            SizeLaw::Atoms(atoms) => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                let mut pick = atoms.len() - 1;
                for (k, (p, _)) in atoms.iter().enumerate() {
                    acc += p;
                    if u < acc {
                        pick = k;
                        break;
                    }
                }
                atoms[pick].1.eval(t, kappa)?
            }
            SizeLaw::OneFactorLogNormal { mean, loading, .. } => {
                check_len(mean.len(), d)?;
                let z: f64 = StandardNormal.sample(rng);
                DVector::from_fn(d, |i, _| (mean[i] + loading[i] * z).exp_m1())
            }
            SizeLaw::Custom { sampler, .. } => sampler(t, kappa, rng),
        };
        check_len(x.len(), d)?;
        check_jump(kappa, &x)?;
        Ok(x)
    }
}

fn check_len(found: usize, d: usize) -> Result<(), JumpError> {
    if found != d {
        return Err(JumpError::InvalidJump(format!(
            "jump vector has length {found}, market has {d} companies"
        )));
    }
    Ok(())
}

/// `x^i >= -1` and `1 + <kappa, x> > 0`.
pub fn check_jump(kappa: &[f64], x: &DVector<f64>) -> Result<(), JumpError> {
    if x.iter().any(|v| !(*v >= -1.0) || !v.is_finite()) {
        return Err(JumpError::InvalidJump(format!(
            "jump {:?} has a coordinate below -1",
            x.as_slice()
        )));
    }
    if !(gross_return(kappa, x) > 0.0) {
        return Err(JumpError::InvalidJump(format!(
            "jump {:?} wipes out the whole market",
            x.as_slice()
        )));
    }
    Ok(())
}

/// `1 + <kappa, x>` for shares summing to one, evaluated as
/// `sum kappa^i (1 + x^i)` so a dominant company jumping to zero does not
/// cancel against the leading one.
pub fn gross_return(kappa: &[f64], x: &DVector<f64>) -> f64 {
    kappa.iter().zip(x.iter()).map(|(k, v)| k * (1.0 + v)).sum()
}

/// `x 1{|x| <= 1}` switch for the canonical truncation.
pub fn is_small(x: &DVector<f64>) -> bool {
    x.norm() <= 1.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sde_engine::rng;

    #[test]
    fn gauss_hermite_moments() {
        let q = gauss_hermite(20);
        let m = |p: i32| q.iter().map(|(z, w)| w * z.powi(p)).sum::<f64>();
        assert!((m(0) - 1.0).abs() < 1e-13);
        assert!(m(1).abs() < 1e-13);
        assert!((m(2) - 1.0).abs() < 1e-12);
        assert!((m(4) - 3.0).abs() < 1e-11);
        // E exp(sZ) = exp(s^2 / 2)
        let e: f64 = q.iter().map(|(z, w)| w * (0.3 * z).exp()).sum();
        assert!((e - (0.045f64).exp()).abs() < 1e-13);
    }

    #[test]
    fn capped_jump_count_silences_measure() {
        let spec = JumpSpec::new(
            2.0.into(),
            2.0,
            SizeLaw::Atoms(vec![(1.0, DVector::from_vec(vec![0.5, 0.0]).into())]),
        )
        .unwrap()
        .with_max_jumps(1);
        assert_eq!(spec.compensator(0.0, &[0.5, 0.5], 0).unwrap().len(), 1);
        assert_eq!(
            spec.compensator(0.0, &[0.5, 0.5], 0).unwrap()[0].weight,
            2.0
        );
        assert!(spec.compensator(0.0, &[0.5, 0.5], 1).unwrap().is_empty());
    }

    #[test]
    fn intensity_above_bound_is_rejected() {
        let spec = JumpSpec::new(3.0.into(), 2.0, SizeLaw::Atoms(vec![])).unwrap();
        assert!(matches!(
            spec.intensity_at(0.0, &[1.0], 0),
            Err(JumpError::IntensityExceedsBound { .. })
        ));
    }

    #[test]
    fn custom_law_without_moments() {
        let law = SizeLaw::Custom {
            sampler: Arc::new(|_, k, _| DVector::zeros(k.len())),
            moments: None,
        };
        let spec = JumpSpec::new(1.0.into(), 1.0, law).unwrap();
        assert_eq!(
            spec.compensator(0.0, &[1.0], 0),
            Err(JumpError::CompensatorUnavailable)
        );
        assert_eq!(
            spec.check_compensator(),
            Err(JumpError::CompensatorUnavailable)
        );
        let mut g = rng::jump_rng(1, 0);
        assert!(spec.sample(0.0, &[1.0], &mut g).is_ok());
    }

    #[test]
    fn sampled_sizes_stay_admissible() {
        let law = SizeLaw::OneFactorLogNormal {
            mean: DVector::from_vec(vec![0.0, -0.5]),
            loading: DVector::from_vec(vec![0.8, 2.0]),
            nodes: 16,
        };
        let spec = JumpSpec::new(1.0.into(), 1.0, law).unwrap();
        let mut g = rng::jump_rng(9, 2);
        for _ in 0..1000 {
            let x = spec.sample(0.0, &[0.3, 0.7], &mut g).unwrap();
            assert!(x.iter().all(|&v| v > -1.0));
        }
        assert!(check_jump(&[0.5, 0.5], &DVector::from_vec(vec![-1.0, -1.0])).is_err());
        assert!(check_jump(&[0.5, 0.5], &DVector::from_vec(vec![-1.0, 0.0])).is_ok());
    }
}
