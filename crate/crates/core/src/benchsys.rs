//! Ground-truth benchmark systems and dataset synthesis.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::diffcore::{Arith, Eval};
use crate::error::{Error, Result};
use crate::odesolve::{integrate_substeps, Excitation, SampledSignal, TimeGrid};
use crate::par;

/// Benchmark plants with their physical constants.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum System {
    HarmonicOscillator { omega2: f64 },
    VanDerPol { mu: f64 },
    FitzHughNagumo { eps: f64, gamma: f64, beta: f64 },
    Earthquake { k_over_m: f64 },
}

impl System {
    pub fn harmonic_oscillator() -> Self {
        System::HarmonicOscillator { omega2: 1.0 }
    }

    pub fn van_der_pol() -> Self {
        System::VanDerPol { mu: 1.0 }
    }

    pub fn fitzhugh_nagumo() -> Self {
        System::FitzHughNagumo {
            eps: 0.1,
            gamma: 1.5,
            beta: 0.8,
        }
    }

    pub fn earthquake() -> Self {
        System::Earthquake { k_over_m: 10.0 }
    }

    pub fn name(&self) -> &'static str {
        match self {
            System::HarmonicOscillator { .. } => "harmonic_oscillator",
            System::VanDerPol { .. } => "van_der_pol",
            System::FitzHughNagumo { .. } => "fitzhugh_nagumo",
            System::Earthquake { .. } => "earthquake",
        }
    }

    pub fn d_x(&self) -> usize {
        match self {
            System::Earthquake { .. } => 4,
            _ => 2,
        }
    }

    pub fn d_y(&self) -> usize {
        self.measured().len()
    }

    pub fn d_u(&self) -> usize {
        match self {
            System::HarmonicOscillator { .. } => 0,
            _ => 1,
        }
    }

    /// State coordinates read by the output map.
    pub fn measured(&self) -> Vec<usize> {
        vec![0]
    }

    /// Whether recognition models see the input. The earthquake forcing is
    /// a disturbance known to the simulator only.
    pub fn recognition_sees_input(&self) -> bool {
        !matches!(self, System::Earthquake { .. }) && self.d_u() > 0
    }

    pub fn params(&self) -> Vec<f64> {
        match *self {
            System::HarmonicOscillator { omega2 } => vec![omega2],
            System::VanDerPol { mu } => vec![mu],
            System::FitzHughNagumo { eps, gamma, beta } => vec![eps, gamma, beta],
            System::Earthquake { k_over_m } => vec![k_over_m],
        }
    }

    pub fn param_names(&self) -> &'static [&'static str] {
        match self {
            System::HarmonicOscillator { .. } => &["omega2"],
            System::VanDerPol { .. } => &["mu"],
            System::FitzHughNagumo { .. } => &["eps", "gamma", "beta"],
            System::Earthquake { .. } => &["k_over_m"],
        }
    }

    /// Dynamics with the physical constants supplied as `p` (same order as
    /// [`System::params`]), so they can be recorded on a tape.
    pub fn field_with<A: Arith>(&self, ar: &mut A, p: &[A::V], x: &[A::V], u: &[f64]) -> Result<Vec<A::V>> {
        if x.len() != self.d_x() {
            return Err(Error::dim("system state", self.d_x(), x.len()));
        }
        if u.len() != self.d_u() {
            return Err(Error::dim("system input", self.d_u(), u.len()));
        }
        if p.len() != self.params().len() {
            return Err(Error::dim("system parameters", self.params().len(), p.len()));
        }
        Ok(match self {
            System::HarmonicOscillator { .. } => {
                let w = ar.mul(p[0], x[0]);
                vec![x[1], ar.neg(w)]
            }
            System::VanDerPol { .. } => {
                // μ(1 − x1²)x2 − x1 + u
                let sq = ar.square(x[0]);
                let damp = ar.affine_c(sq, -1.0, 1.0);
                let dx2 = ar.mul(damp, x[1]);
                let dx2 = ar.mul(p[0], dx2);
                let rest = ar.lincomb(&[(dx2, 1.0), (x[0], -1.0)], u[0]);
                vec![x[1], rest]
            }
            System::FitzHughNagumo { .. } => {
                let (v, w) = (x[0], x[1]);
                let v3 = ar.cube(v);
                let num = ar.lincomb(&[(v, 1.0), (v3, -1.0), (w, -1.0)], 0.0);
                let fast = ar.div(num, p[0]);
                let dv = ar.add_c(fast, u[0]);
                let gv = ar.mul(p[1], v);
                let dw = ar.lincomb(&[(gv, 1.0), (w, -1.0), (p[2], 1.0)], 0.0);
                vec![dv, dw]
            }
            System::Earthquake { .. } => {
                let a = ar.lincomb(&[(x[2], 1.0), (x[0], -2.0)], 0.0);
                let a = ar.mul(p[0], a);
                let b = ar.sub(x[0], x[2]);
                let b = ar.mul(p[0], b);
                vec![x[1], ar.add_c(a, u[0]), x[3], ar.add_c(b, u[0])]
            }
        })
    }

    /// Published dynamics at `(x, u)`.
    pub fn true_field(&self, x: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        self.field_with(&mut Eval, &self.params(), x, u)
    }
}

/// One concrete exogenous signal.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InputSpec {
    None,
    Constant { value: f64 },
    /// `amplitude·sin(omega·t)`
    Sinusoid { amplitude: f64, omega: f64 },
    /// `−f0·omega²·cos(omega·t)`, the earthquake ground acceleration.
    GroundMotion { f0: f64, omega: f64 },
}

impl InputSpec {
    pub fn channels(&self) -> usize {
        match self {
            InputSpec::None => 0,
            _ => 1,
        }
    }

    pub fn value(&self, t: f64) -> Option<f64> {
        match *self {
            InputSpec::None => None,
            InputSpec::Constant { value } => Some(value),
            InputSpec::Sinusoid { amplitude, omega } => Some(amplitude * (omega * t).sin()),
            InputSpec::GroundMotion { f0, omega } => Some(-f0 * omega * omega * (omega * t).cos()),
        }
    }

    /// Initial state `(ω1, ω2, ω3)` of the sine generator reproducing this input.
    pub fn generator_state(&self) -> Option<[f64; 3]> {
        match *self {
            InputSpec::Sinusoid { amplitude, omega } => Some([0.0, amplitude * omega, omega * omega]),
            _ => None,
        }
    }

    /// Parameters as name/value pairs for manifests.
    pub fn describe(&self) -> Vec<(&'static str, f64)> {
        match *self {
            InputSpec::None => vec![],
            InputSpec::Constant { value } => vec![("value", value)],
            InputSpec::Sinusoid { amplitude, omega } => vec![("amplitude", amplitude), ("omega", omega)],
            InputSpec::GroundMotion { f0, omega } => vec![("f0", f0), ("omega", omega)],
        }
    }
}

impl Excitation for InputSpec {
    fn channels(&self) -> usize {
        InputSpec::channels(self)
    }

    fn sample(&self, t: f64, out: &mut Vec<f64>) -> Result<()> {
        out.clear();
        out.extend(self.value(t));
        Ok(())
    }
}

/// Sine generator `ω̇1 = ω2, ω̇2 = −ω3·ω1, ω̇3 = 0` with `u = ω1`.
pub fn generator_field<A: Arith>(ar: &mut A, w: &[A::V]) -> Vec<A::V> {
    let m = ar.mul(w[2], w[0]);
    let zero = ar.cst(0.0);
    vec![w[1], ar.neg(m), zero]
}

/// Samples of `spec` on `grid`; no channels for [`InputSpec::None`].
pub fn input_signal(spec: &InputSpec, grid: &TimeGrid) -> SampledSignal {
    let values = grid.times().into_iter().filter_map(|t| spec.value(t)).collect();
    SampledSignal {
        grid: *grid,
        channels: spec.channels(),
        values,
    }
}

/// Distribution from which each trajectory draws its input.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InputFamily {
    None,
    Constant { low: f64, high: f64 },
    Sinusoid { amplitude: f64, omega_low: f64, omega_high: f64 },
    GroundMotion { f0_low: f64, f0_high: f64, omega_low: f64, omega_high: f64 },
}

fn draw(rng: &mut impl Rng, low: f64, high: f64) -> f64 {
    if high > low {
        rng.random_range(low..high)
    } else {
        low
    }
}

impl InputFamily {
    /// Benchmark protocol default for each system.
    pub fn default_for(sys: &System) -> Self {
        match sys {
            System::HarmonicOscillator { .. } => InputFamily::None,
            System::VanDerPol { .. } => InputFamily::Sinusoid {
                amplitude: 1.2,
                omega_low: 0.5,
                omega_high: 2.0,
            },
            System::FitzHughNagumo { .. } => InputFamily::Constant { low: 0.0, high: 1.0 },
            System::Earthquake { .. } => InputFamily::GroundMotion {
                f0_low: 0.5,
                f0_high: 1.5,
                omega_low: 1.0,
                omega_high: 3.0,
            },
        }
    }

    pub fn channels(&self) -> usize {
        match self {
            InputFamily::None => 0,
            _ => 1,
        }
    }

    pub fn sample(&self, rng: &mut impl Rng) -> InputSpec {
        match *self {
            InputFamily::None => InputSpec::None,
            InputFamily::Constant { low, high } => InputSpec::Constant {
                value: draw(rng, low, high),
            },
            InputFamily::Sinusoid {
                amplitude,
                omega_low,
                omega_high,
            } => InputSpec::Sinusoid {
                amplitude,
                omega: draw(rng, omega_low, omega_high),
            },
            InputFamily::GroundMotion {
                f0_low,
                f0_high,
                omega_low,
                omega_high,
            } => InputSpec::GroundMotion {
                f0: draw(rng, f0_low, f0_high),
                omega: draw(rng, omega_low, omega_high),
            },
        }
    }
}

/// Output noise variance and seed.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub variance: f64,
    pub seed: u64,
}

/// Box from which initial states are drawn uniformly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct X0Sampler {
    pub low: Vec<f64>,
    pub high: Vec<f64>,
}

impl X0Sampler {
    pub fn unit_box(d: usize) -> Self {
        X0Sampler {
            low: vec![-1.0; d],
            high: vec![1.0; d],
        }
    }

    pub fn sample(&self, rng: &mut impl Rng) -> Vec<f64> {
        self.low.iter().zip(&self.high).map(|(&l, &h)| draw(rng, l, h)).collect()
    }
}

/// One simulated rollout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub grid: TimeGrid,
    pub y: SampledSignal,
    /// Sampled input, absent for autonomous systems.
    pub u: Option<SampledSignal>,
    /// True states when known.
    pub x: Option<SampledSignal>,
    pub input: InputSpec,
}

impl Trajectory {
    /// Copy restricted to the first `n` samples.
    pub fn prefix(&self, n: usize) -> Result<Trajectory> {
        Ok(Trajectory {
            grid: self.grid.prefix(n)?,
            y: self.y.prefix(n)?,
            u: self.u.as_ref().map(|u| u.prefix(n)).transpose()?,
            x: self.x.as_ref().map(|x| x.prefix(n)).transpose()?,
            input: self.input,
        })
    }
}

/// Step refinement used when simulating ground truth.
pub const GENERATION_SUBSTEPS: usize = 10;

/// Rng of trajectory `j` under `seed`; streams are independent per index.
pub fn trajectory_rng(seed: u64, j: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(j as u64);
    rng
}

/// Simulates one trajectory from a given initial state and input.
pub fn simulate(sys: &System, x0: &[f64], input: InputSpec, grid: &TimeGrid, noise_var: f64, rng: &mut impl Rng) -> Result<Trajectory> {
    if input.channels() != sys.d_u() {
        return Err(Error::Config(format!(
            "{} expects {} input channels, got {}",
            sys.name(),
            sys.d_u(),
            input.channels()
        )));
    }
    if !(noise_var >= 0.0) {
        return Err(Error::Config(format!("noise variance must be non-negative, got {noise_var}")));
    }
    let params = sys.params();
    let mut field = |ar: &mut Eval, _t: f64, x: &[f64], u: &[f64]| sys.field_with(ar, &params, x, u);
    let rows = integrate_substeps(&mut Eval, &mut field, x0, grid, Some(&input), GENERATION_SUBSTEPS)?;
    let measured = sys.measured();
    let normal = Normal::new(0.0, noise_var.sqrt()).map_err(|e| Error::Config(e.to_string()))?;
    let mut y = Vec::with_capacity(grid.n * measured.len());
    for r in &rows {
        for &k in &measured {
            let eps = if noise_var > 0.0 { normal.sample(rng) } else { 0.0 };
            y.push(r[k] + eps);
        }
    }
    let u = (sys.d_u() > 0).then(|| input_signal(&input, grid));
    Ok(Trajectory {
        grid: *grid,
        y: SampledSignal::new(*grid, measured.len(), y)?,
        u,
        x: Some(SampledSignal::from_rows(*grid, &rows)?),
        input,
    })
}

/// `count` trajectories with per-trajectory seeded draws of `x0`, input and noise.
pub fn generate_dataset(
    sys: &System,
    family: &InputFamily,
    noise: &NoiseSpec,
    count: usize,
    grid: &TimeGrid,
    sampler: &X0Sampler,
) -> Result<Vec<Trajectory>> {
    if count == 0 {
        return Err(Error::Config("a dataset needs at least one trajectory".into()));
    }
    if sampler.low.len() != sys.d_x() || sampler.high.len() != sys.d_x() {
        return Err(Error::dim("initial-state sampler", sys.d_x(), sampler.low.len()));
    }
    if sampler.low.iter().chain(&sampler.high).any(|v| !v.is_finite()) {
        return Err(Error::Config("initial-state bounds must be finite".into()));
    }
    par::map_indexed(count, |j| {
        let mut rng = trajectory_rng(noise.seed, j);
        let x0 = sampler.sample(&mut rng);
        let input = family.sample(&mut rng);
        simulate(sys, &x0, input, grid, noise.variance, &mut rng)
    })
    .into_iter()
    .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::odesolve::integrate;

    #[test]
    fn field_examples() {
        assert_eq!(System::van_der_pol().true_field(&[1.0, 1.0], &[0.0]).unwrap(), vec![1.0, -1.0]);
        let fhn = System::fitzhugh_nagumo().true_field(&[0.0, 0.0], &[0.0]).unwrap();
        assert_eq!(fhn, vec![0.0, 0.8]);
        let ground = InputSpec::GroundMotion { f0: 1.0, omega: 2.0 };
        let u = ground.value(0.0).unwrap();
        assert_eq!(
            System::earthquake().true_field(&[0.0; 4], &[u]).unwrap(),
            vec![0.0, -4.0, 0.0, -4.0]
        );
        let ho = System::HarmonicOscillator { omega2: 0.0 };
        assert_eq!(ho.true_field(&[0.3, -0.7], &[]).unwrap(), vec![-0.7, 0.0]);
        assert!(ho.true_field(&[0.3], &[]).is_err());
    }

    #[test]
    fn input_examples() {
        let g = TimeGrid::new(0.0, 0.1, 11).unwrap();
        let c = input_signal(&InputSpec::Constant { value: 0.5 }, &g);
        assert!(c.values.iter().all(|&v| v == 0.5));
        let s = InputSpec::Sinusoid { amplitude: 1.2, omega: 1.0 };
        assert!((s.value(std::f64::consts::FRAC_PI_2).unwrap() - 1.2).abs() < 1e-15);
        assert_eq!(input_signal(&InputSpec::None, &g).channels, 0);
    }

    #[test]
    fn generator_reproduces_the_sinusoid() {
        let spec = InputSpec::Sinusoid { amplitude: 1.2, omega: 1.7 };
        let g = TimeGrid::new(0.0, 1e-3, 3001).unwrap();
        let rows = integrate(
            &mut Eval,
            |ar: &mut Eval, _t: f64, w: &[f64], _u: &[f64]| Ok(generator_field(ar, w)),
            &spec.generator_state().unwrap(),
            &g,
            None,
        )
        .unwrap();
        for (i, r) in rows.iter().enumerate() {
            assert!((r[0] - spec.value(g.time(i)).unwrap()).abs() < 1e-6);
        }
    }

    fn grid() -> TimeGrid {
        TimeGrid::new(0.0, 0.03, 101).unwrap()
    }

    #[test]
    fn noiseless_outputs_equal_states() {
        let sys = System::van_der_pol();
        let noise = NoiseSpec { variance: 0.0, seed: 3 };
        let data = generate_dataset(&sys, &InputFamily::default_for(&sys), &noise, 4, &grid(), &X0Sampler::unit_box(2)).unwrap();
        for tr in &data {
            let x = tr.x.as_ref().unwrap();
            for i in 0..tr.grid.n {
                assert_eq!(tr.y.row(i)[0], x.row(i)[0]);
            }
        }
    }

    #[test]
    fn fixed_seed_is_bitwise_reproducible() {
        let sys = System::earthquake();
        let noise = NoiseSpec { variance: 1e-4, seed: 11 };
        let fam = InputFamily::default_for(&sys);
        let a = generate_dataset(&sys, &fam, &noise, 5, &grid(), &X0Sampler::unit_box(4)).unwrap();
        let b = generate_dataset(&sys, &fam, &noise, 5, &grid(), &X0Sampler::unit_box(4)).unwrap();
        assert_eq!(a, b);
        let c = generate_dataset(&sys, &fam, &NoiseSpec { seed: 12, ..noise }, 5, &grid(), &X0Sampler::unit_box(4)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn noise_has_the_requested_variance() {
        let sys = System::harmonic_oscillator();
        let noise = NoiseSpec { variance: 1e-2, seed: 5 };
        let data = generate_dataset(&sys, &InputFamily::None, &noise, 40, &grid(), &X0Sampler::unit_box(2)).unwrap();
        let res: Vec<f64> = data
            .iter()
            .flat_map(|tr| {
                let x = tr.x.as_ref().unwrap();
                (0..tr.grid.n).map(move |i| tr.y.row(i)[0] - x.row(i)[0]).collect::<Vec<_>>()
            })
            .collect();
        let var = res.iter().map(|r| r * r).sum::<f64>() / res.len() as f64;
        assert!((var - 1e-2).abs() < 1.5e-3, "variance {var}");
    }

    #[test]
    fn oscillator_energy_is_conserved() {
        let sys = System::harmonic_oscillator();
        let g = TimeGrid::new(0.0, 0.03, 101).unwrap();
        let mut rng = trajectory_rng(0, 0);
        let tr = simulate(&sys, &[0.8, -0.3], InputSpec::None, &g, 0.0, &mut rng).unwrap();
        let x = tr.x.unwrap();
        let energy = |r: &[f64]| 0.5 * (r[1] * r[1] + r[0] * r[0]);
        let e0 = energy(x.row(0));
        for r in x.rows() {
            assert!(((energy(r) - e0) / e0).abs() < 1e-8);
        }
    }

    #[test]
    fn van_der_pol_reaches_its_limit_cycle() {
        let sys = System::van_der_pol();
        let g = TimeGrid::new(0.0, 0.01, 3001).unwrap();
        let amplitude = |x0: [f64; 2]| {
            let mut rng = trajectory_rng(0, 0);
            let tr = simulate(&sys, &x0, InputSpec::Constant { value: 0.0 }, &g, 0.0, &mut rng).unwrap();
            let x = tr.x.unwrap();
            // last 10 s cover more than one period
            x.rows().skip(2000).map(|r| r[0].abs()).fold(0.0, f64::max)
        };
        let a = amplitude([0.1, 0.0]);
        let b = amplitude([3.0, -2.0]);
        assert!(((a - b) / b).abs() < 0.02, "{a} vs {b}");
    }

    #[test]
    fn rejects_empty_datasets() {
        let sys = System::harmonic_oscillator();
        let noise = NoiseSpec { variance: 0.0, seed: 0 };
        assert!(generate_dataset(&sys, &InputFamily::None, &noise, 0, &grid(), &X0Sampler::unit_box(2)).is_err());
    }
}
