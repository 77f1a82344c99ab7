//! Benchmark problems and a name registry.
//!
//! Constraints follow the `c(x) ≥ 0` convention throughout.

use std::f64::consts::{E, PI};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::driver::Problem;
use crate::{Error, Result};

/// Lengthscale of generated within-model functions.
pub const RFF_LENGTHSCALE: f64 = 0.1;
/// Number of random Fourier features per generated function.
pub const RFF_FEATURES: usize = 1028;

/// Random Fourier feature approximation of a squared-exponential GP prior
/// sample with unit output scale:
/// `f(x) = Σ w_m √(2/M) cos(θ_mᵀx + τ_m)`.
#[derive(Clone, Debug, PartialEq)]
pub struct RffSample {
    pub weights: Vec<f64>,
    /// Row `m` is `θ_m`.
    pub frequencies: Vec<Vec<f64>>,
    pub phases: Vec<f64>,
    pub lengthscale: f64,
}

impl RffSample {
    /// Draw weights, then frequencies, then phases from `rng`.
    pub fn draw(dim: usize, lengthscale: f64, features: usize, rng: &mut impl Rng) -> Result<Self> {
        if dim == 0 || features == 0 || !(lengthscale > 0.0) {
            return Err(Error::InvalidArgument("RFF sample needs d ≥ 1, M ≥ 1 and ℓ > 0".into()));
        }
        let freq = Normal::new(0.0, 1.0 / lengthscale).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        let weights = (0..features).map(|_| rng.sample(StandardNormal)).collect();
        let frequencies = (0..features).map(|_| (0..dim).map(|_| freq.sample(rng)).collect()).collect();
        let phases = (0..features).map(|_| rng.random_range(0.0..2.0 * PI)).collect();
        Ok(Self { weights, frequencies, phases, lengthscale })
    }

    pub fn dim(&self) -> usize {
        self.frequencies.first().map_or(0, Vec::len)
    }

    pub fn features(&self) -> usize {
        self.weights.len()
    }

    fn scale(&self) -> f64 {
        (2.0 / self.features() as f64).sqrt()
    }

    fn arg(&self, m: usize, x: &[f64]) -> f64 {
        self.frequencies[m].iter().zip(x).map(|(t, v)| t * v).sum::<f64>() + self.phases[m]
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.scale() * (0..self.features()).map(|m| self.weights[m] * self.arg(m, x).cos()).sum::<f64>()
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.dim()];
        for m in 0..self.features() {
            let s = -self.scale() * self.weights[m] * self.arg(m, x).sin();
            for (gi, t) in g.iter_mut().zip(&self.frequencies[m]) {
                *gi += s * t;
            }
        }
        g
    }
}

/// Objective and (optional) constraint draws for a within-model problem.
/// The objective uses stream 0 of the seed and the constraint stream 1.
pub fn within_model_samples(d: usize, seed: u64, constrained: bool) -> Result<(RffSample, Option<RffSample>)> {
    let draw = |stream: u64| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        RffSample::draw(d, RFF_LENGTHSCALE, RFF_FEATURES, &mut rng)
    };
    let objective = draw(0)?;
    let constraint = if constrained { Some(draw(1)?) } else { None };
    Ok((objective, constraint))
}

/// Within-model problem on `[0,1]^d`; the constrained variant adds
/// `c(x) = ĉ(x) − 1` for an independent draw `ĉ`.
pub fn make_within_model(d: usize, seed: u64, constrained: bool) -> Result<Problem> {
    let (objective, constraint) = within_model_samples(d, seed, constrained)?;
    let name = if constrained { "within-model-constrained" } else { "within-model" };
    let objective = Arc::new(objective);
    let mut problem = Problem::new(name, vec![0.0; d], vec![1.0; d], move |x: &[f64]| objective.eval(x))?;
    if let Some(c) = constraint {
        problem = problem.with_constraint(move |x: &[f64]| c.eval(x) - 1.0);
    }
    Ok(problem)
}

pub fn ackley_value(x: &[f64]) -> f64 {
    let (a, b, c) = (20.0, 0.2, 2.0 * PI);
    let n = x.len() as f64;
    let sq = x.iter().map(|v| v * v).sum::<f64>() / n;
    let cs = x.iter().map(|v| (c * v).cos()).sum::<f64>() / n;
    -a * (-b * sq.sqrt()).exp() - cs.exp() + a + E
}

/// Ackley on `[−5, 10]^d`; constrained with `−Σx ≥ 0` and `5 − ‖x‖ ≥ 0`.
pub fn ackley(d: usize, constrained: bool) -> Result<Problem> {
    let name = if constrained { "ackley-constrained" } else { "ackley" };
    let mut problem = Problem::new(name, vec![-5.0; d], vec![10.0; d], ackley_value)?.with_known_optimum(0.0);
    if constrained {
        problem = problem
            .with_constraint(|x: &[f64]| -x.iter().sum::<f64>())
            .with_constraint(|x: &[f64]| 5.0 - x.iter().map(|v| v * v).sum::<f64>().sqrt());
    }
    Ok(problem)
}

pub const HARTMANN_ALPHA: [f64; 4] = [1.0, 1.2, 3.0, 3.2];
pub const HARTMANN_A: [[f64; 6]; 4] = [
    [10.0, 3.0, 17.0, 3.5, 1.7, 8.0],
    [0.05, 10.0, 17.0, 0.1, 8.0, 14.0],
    [3.0, 3.5, 1.7, 10.0, 17.0, 8.0],
    [17.0, 8.0, 0.05, 10.0, 0.1, 14.0],
];
pub const HARTMANN_P: [[f64; 6]; 4] = [
    [0.1312, 0.1696, 0.5569, 0.0124, 0.8283, 0.5886],
    [0.2329, 0.4135, 0.8307, 0.3736, 0.1004, 0.9991],
    [0.2348, 0.1451, 0.3522, 0.2883, 0.3047, 0.6650],
    [0.4047, 0.8828, 0.8732, 0.5743, 0.1091, 0.0381],
];
pub const HARTMANN_MINIMIZER: [f64; 6] = [0.20169, 0.150011, 0.476874, 0.275332, 0.311652, 0.6573];
pub const HARTMANN_MINIMUM: f64 = -3.32237;

pub fn hartmann6_value(x: &[f64]) -> f64 {
    -HARTMANN_ALPHA
        .iter()
        .zip(HARTMANN_A.iter().zip(&HARTMANN_P))
        .map(|(alpha, (a, p))| {
            let inner: f64 = (0..6).map(|j| a[j] * (x[j] - p[j]) * (x[j] - p[j])).sum();
            alpha * (-inner).exp()
        })
        .sum::<f64>()
}

/// Six-dimensional Hartmann on `[0,1]^6`; constrained with `1 − ‖x‖² ≥ 0`.
pub fn hartmann6(constrained: bool) -> Result<Problem> {
    let name = if constrained { "hartmann6-constrained" } else { "hartmann6" };
    let mut problem =
        Problem::new(name, vec![0.0; 6], vec![1.0; 6], hartmann6_value)?.with_known_optimum(HARTMANN_MINIMUM);
    if constrained {
        problem = problem.with_constraint(|x: &[f64]| 1.0 - x.iter().map(|v| v * v).sum::<f64>());
    }
    Ok(problem)
}

pub const GRAMACY_OPTIMUM: f64 = 0.599788;

pub fn gramacy_constraints(x: &[f64]) -> [f64; 2] {
    let (x1, x2) = (x[0], x[1]);
    [-(1.5 - x1 - 2.0 * x2 - 0.5 * (2.0 * PI * (x1 * x1 - 2.0 * x2)).sin()), -(x1 * x1 + x2 * x2 - 1.5)]
}

/// `x₁ + x₂` on the unit square with two nonlinear constraints.
pub fn gramacy() -> Problem {
    Problem::new("gramacy", vec![0.0; 2], vec![1.0; 2], |x: &[f64]| x[0] + x[1])
        .expect("static bounds are valid")
        .with_constraint(|x: &[f64]| gramacy_constraints(x)[0])
        .with_constraint(|x: &[f64]| gramacy_constraints(x)[1])
        .with_known_optimum(GRAMACY_OPTIMUM)
}

pub const SPEED_REDUCER_LOWER: [f64; 7] = [2.6, 0.7, 17.0, 7.3, 7.8, 2.9, 5.0];
pub const SPEED_REDUCER_UPPER: [f64; 7] = [3.6, 0.8, 28.0, 8.3, 8.3, 3.9, 5.5];
pub const SPEED_REDUCER_OPTIMUM: f64 = 2996.3482;

/// Weight of the gear train.
#[allow(clippy::approx_constant)]
pub fn speed_reducer_weight(x: &[f64]) -> f64 {
    let [x1, x2, x3, x4, x5, x6, x7] = [x[0], x[1], x[2], x[3], x[4], x[5], x[6]];
    0.7854 * x1 * x2 * x2 * (3.3333 * x3 * x3 + 14.9334 * x3 - 43.0934) - 1.508 * x1 * (x6 * x6 + x7 * x7)
        + 7.4777 * (x6.powi(3) + x7.powi(3))
        + 0.7854 * (x4 * x6 * x6 + x5 * x7 * x7)
}

/// The eleven design constraints as `c_i(x) ≥ 0`.
pub fn speed_reducer_constraints(x: &[f64]) -> [f64; 11] {
    let [x1, x2, x3, x4, x5, x6, x7] = [x[0], x[1], x[2], x[3], x[4], x[5], x[6]];
    let g = [
        27.0 / (x1 * x2 * x2 * x3) - 1.0,
        397.5 / (x1 * x2 * x2 * x3 * x3) - 1.0,
        1.93 * x4.powi(3) / (x2 * x3 * x6.powi(4)) - 1.0,
        1.93 * x5.powi(3) / (x2 * x3 * x7.powi(4)) - 1.0,
        ((745.0 * x4 / (x2 * x3)).powi(2) + 16.9e6).sqrt() / (0.1 * x6.powi(3)) - 1100.0,
        ((745.0 * x5 / (x2 * x3)).powi(2) + 157.5e6).sqrt() / (0.1 * x7.powi(3)) - 850.0,
        x2 * x3 - 40.0,
        5.0 - x1 / x2,
        x1 / x2 - 12.0,
        (1.5 * x6 + 1.9) / x4 - 1.0,
        (1.1 * x7 + 1.9) / x5 - 1.0,
    ];
    g.map(|v| -v)
}

/// Seven-variable speed-reducer weight minimisation with the tooth count
/// treated as continuous.
pub fn speed_reducer() -> Problem {
    let mut problem =
        Problem::new("speed-reducer", SPEED_REDUCER_LOWER.to_vec(), SPEED_REDUCER_UPPER.to_vec(), speed_reducer_weight)
            .expect("static bounds are valid")
            .with_known_optimum(SPEED_REDUCER_OPTIMUM);
    for i in 0..11 {
        problem = problem.with_constraint(move |x: &[f64]| speed_reducer_constraints(x)[i]);
    }
    problem
}

pub const PROBLEM_NAMES: [&str; 8] = [
    "within-model",
    "within-model-constrained",
    "ackley",
    "ackley-constrained",
    "hartmann6",
    "hartmann6-constrained",
    "gramacy",
    "speed-reducer",
];

/// Look up a problem by name. `dim` applies to the within-model (default 8)
/// and Ackley (default 5) families; `seed` only to within-model problems.
pub fn by_name(name: &str, dim: Option<usize>, seed: u64) -> Result<Problem> {
    let fixed_dim = |expected: usize| match dim {
        Some(d) if d != expected => Err(Error::InvalidArgument(format!("{name} has dimension {expected}, not {d}"))),
        _ => Ok(()),
    };
    let positive = |d: usize| {
        if d == 0 {
            Err(Error::InvalidArgument("dimension must be positive".into()))
        } else {
            Ok(d)
        }
    };
    match name {
        "within-model" => make_within_model(positive(dim.unwrap_or(8))?, seed, false),
        "within-model-constrained" => make_within_model(positive(dim.unwrap_or(8))?, seed, true),
        "ackley" => ackley(positive(dim.unwrap_or(5))?, false),
        "ackley-constrained" => ackley(positive(dim.unwrap_or(5))?, true),
        "hartmann6" => fixed_dim(6).and_then(|_| hartmann6(false)),
        "hartmann6-constrained" => fixed_dim(6).and_then(|_| hartmann6(true)),
        "gramacy" => fixed_dim(2).map(|_| gramacy()),
        "speed-reducer" => fixed_dim(7).map(|_| speed_reducer()),
        _ => Err(Error::UnknownProblem { name: name.to_string(), known: PROBLEM_NAMES.join(", ") }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn within_model_is_deterministic() {
        let a = make_within_model(3, 11, true).unwrap();
        let b = make_within_model(3, 11, true).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..100 {
            let x: Vec<f64> = (0..3).map(|_| rng.random()).collect();
            assert_eq!(a.evaluate(&x).0.to_bits(), b.evaluate(&x).0.to_bits());
            assert_eq!(a.evaluate(&x).1[0].to_bits(), b.evaluate(&x).1[0].to_bits());
        }
    }

    #[test]
    fn within_model_prior_moments() {
        let x = vec![0.5; 4];
        let values: Vec<f64> = (0..200).map(|s| within_model_samples(4, s, false).unwrap().0.eval(&x)).collect();
        let mean = values.iter().sum::<f64>() / 200.0;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 199.0;
        assert!(mean.abs() < 0.15, "mean {mean}");
        assert!((0.7..=1.3).contains(&var), "variance {var}");
    }

    #[test]
    fn rff_gradient_matches_finite_differences() {
        let (f, _) = within_model_samples(3, 5, false).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10 {
            let x: Vec<f64> = (0..3).map(|_| rng.random()).collect();
            let g = f.gradient(&x);
            for k in 0..3 {
                let h = 1e-6;
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[k] += h;
                xm[k] -= h;
                let fd = (f.eval(&xp) - f.eval(&xm)) / (2.0 * h);
                assert!((fd - g[k]).abs() < 1e-6 * g[k].abs().max(1.0) * 10.0, "{fd} vs {}", g[k]);
            }
        }
    }

    #[test]
    fn ackley_values() {
        let p = ackley(5, true).unwrap();
        let (f0, c0) = p.evaluate(&[0.0; 5]);
        assert!(f0.abs() < 1e-12);
        assert_eq!(c0, vec![0.0, 5.0]);
        assert_relative_eq!(p.evaluate(&[1.0; 5]).0, 3.6253849384403627, epsilon = 1e-10);
    }

    #[test]
    fn hartmann_values() {
        let a: f64 = HARTMANN_A.iter().flatten().sum();
        let p: f64 = HARTMANN_P.iter().flatten().sum();
        let weighted: f64 = HARTMANN_A.iter().flatten().zip(1..).map(|(v, i)| v * f64::from(i)).sum();
        let weighted_p: f64 = HARTMANN_P.iter().flatten().zip(1..).map(|(v, i)| v * f64::from(i)).sum();
        assert_relative_eq!(a, 184.7, epsilon = 1e-9);
        assert_relative_eq!(p, 10.1095, epsilon = 1e-9);
        assert_relative_eq!(weighted, 2376.7, epsilon = 1e-9);
        assert_relative_eq!(weighted_p, 130.9783, epsilon = 1e-9);
        assert_relative_eq!(HARTMANN_ALPHA.iter().sum::<f64>(), 8.4);

        let problem = hartmann6(true).unwrap();
        let (f, c) = problem.evaluate(&HARTMANN_MINIMIZER);
        assert_relative_eq!(f, -3.322368011391339, epsilon = 1e-12);
        assert!((f - HARTMANN_MINIMUM).abs() < 1e-5);
        assert_relative_eq!(c[0], 1.0 - 0.895568937425, epsilon = 1e-12);
        assert!(problem.evaluate(&[1.0; 6]).0 > -0.1);
    }

    #[test]
    fn gramacy_values() {
        let p = gramacy();
        assert_eq!(p.evaluate(&[0.5, 0.5]).0, 1.0);
        assert_eq!(p.evaluate(&[0.0, 0.0]).1[1], 1.5);
        let x = [0.19512269, 0.40466536];
        let (f, c) = p.evaluate(&x);
        assert!((f - 0.5998).abs() < 1e-4);
        assert!(c[0] > -1e-6 && c[1] > 0.0);
    }

    #[test]
    fn speed_reducer_cross_check() {
        let table: [([f64; 7], f64, [f64; 11]); 3] = [
            (
                [2.6, 0.7, 17.0, 7.3, 7.8, 2.9, 5.0],
                2362.26534872076,
                [
                    -0.24665250715670894,
                    -0.07961736730891467,
                    0.10795464448721648,
                    0.8768557499159664,
                    -595.963877458058,
                    -154.7517687973227,
                    28.1,
                    -1.2857142857142851,
                    8.285714285714285,
                    0.14383561643835618,
                    0.05128205128205121,
                ],
            ),
            (
                [3.6, 0.8, 28.0, 8.3, 8.3, 3.9, 5.5],
                7144.825930798401,
                [
                    0.5814732142857144,
                    0.7799412733843538,
                    0.7870463247634769,
                    0.9461615175583244,
                    405.41330464704436,
                    95.50346894495567,
                    17.599999999999998,
                    -0.5,
                    7.5,
                    0.0662650602409639,
                    0.04216867469879515,
                ],
            ),
            (
                [3.5, 0.7, 17.0, 7.3, 7.715, 3.35, 5.2867],
                2994.438267752366,
                [
                    0.07391528039787332,
                    0.1979985271419491,
                    0.4990438647319426,
                    0.9046590505333555,
                    -0.21147567552065993,
                    0.022015414082943607,
                    28.1,
                    0.0,
                    7.0,
                    0.0513698630136985,
                    -4.795852235917053e-05,
                ],
            ),
        ];
        for (x, f, c) in table {
            assert_relative_eq!(speed_reducer_weight(&x), f, max_relative = 1e-12);
            for (got, want) in speed_reducer_constraints(&x).iter().zip(c) {
                assert!((got - want).abs() <= 1e-9 * want.abs().max(1.0), "{got} vs {want}");
            }
        }
        let extra: [([f64; 7], f64); 2] = [
            ([3.1, 0.75, 22.5, 7.8, 8.05, 3.4, 5.25], 4150.368715963032),
            ([3.0, 0.72, 20.0, 8.0, 8.0, 3.2, 5.3], 3366.478744359967),
        ];
        for (x, f) in extra {
            assert_relative_eq!(speed_reducer_weight(&x), f, max_relative = 1e-12);
        }
    }

    #[test]
    fn speed_reducer_midpoint_and_monotone() {
        let p = speed_reducer();
        let mid: Vec<f64> = SPEED_REDUCER_LOWER.iter().zip(&SPEED_REDUCER_UPPER).map(|(l, u)| 0.5 * (l + u)).collect();
        let (f, c) = p.evaluate(&mid);
        assert!(f.is_finite() && c.len() == 11 && c.iter().all(|v| v.is_finite()));
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..10 {
            let u: Vec<f64> = (0..7).map(|_| rng.random()).collect();
            let mut x = p.from_unit(&u);
            x[0] = 2.6 + 0.5 * rng.random::<f64>();
            let w0 = speed_reducer_weight(&x);
            x[0] += 0.3;
            assert!(speed_reducer_weight(&x) > w0);
        }
    }

    #[test]
    fn registry() {
        for name in PROBLEM_NAMES {
            let p = by_name(name, None, 0).unwrap();
            assert_eq!(p.name, name);
        }
        assert_eq!(by_name("ackley", Some(3), 0).unwrap().dim(), 3);
        assert!(by_name("gramacy", Some(3), 0).is_err());
        assert!(matches!(by_name("branin", None, 0), Err(Error::UnknownProblem { .. })));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn oracles_are_finite_on_the_box(u in proptest::collection::vec(0.0f64..=1.0, 7)) {
            for name in PROBLEM_NAMES {
                let p = by_name(name, Some(match name {
                    "gramacy" => 2,
                    "hartmann6" | "hartmann6-constrained" => 6,
                    "speed-reducer" => 7,
                    _ => 4,
                }), 1).unwrap();
                let (f, c) = p.evaluate(&p.from_unit(&u[..p.dim()]));
                prop_assert!(f.is_finite() && c.iter().all(|v| v.is_finite()));
            }
        }
    }
}
