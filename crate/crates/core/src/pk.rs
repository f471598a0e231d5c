//! Two-compartment pharmacokinetic model with first-order absorption and
//! first-order elimination, its RK4 integrator, and the noisy datasets built
//! from it.
//!
//! State layout is `(x0, x1, x2)`: depot, central, and peripheral drug
//! amounts. The dynamics are
//!
//! ```text
//! dx0/dt = -ka*x0
//! dx1/dt =  ka*x0 - (cl + q)/v1 * x1 + q/v2 * x2
//! dx2/dt =  q/v1 * x1 - q/v2 * x2
//! ```

use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

/// The five physical constants of the two-compartment system.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PkParameters {
    /// Absorption rate constant [1/time].
    pub ka: f64,
    /// Elimination clearance [volume/time].
    pub cl: f64,
    /// Inter-compartment distribution [volume/time].
    pub q: f64,
    /// Central volume.
    pub v1: f64,
    /// Peripheral volume.
    pub v2: f64,
}

impl Default for PkParameters {
    fn default() -> Self {
        Self {
            ka: 1.14,
            cl: 3.57,
            q: 1.14,
            v1: 0.454,
            v2: 2.87,
        }
    }
}

impl PkParameters {
    pub fn new(ka: f64, cl: f64, q: f64, v1: f64, v2: f64) -> Result<Self> {
        let p = Self { ka, cl, q, v1, v2 };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, value) in self.named() {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::InvalidParameter { name, value });
            }
        }
        Ok(())
    }

    /// Parameters in the fixed order `ka, cl, q, v1, v2`.
    pub fn named(&self) -> [(&'static str, f64); 5] {
        [
            ("ka", self.ka),
            ("cl", self.cl),
            ("q", self.q),
            ("v1", self.v1),
            ("v2", self.v2),
        ]
    }

    /// Coefficients of the (linear) right-hand side: row `i` holds the
    /// coefficients of `x0, x1, x2` in `dx_i/dt`.
    pub fn linear_coefficients(&self) -> [[f64; 3]; 3] {
        [
            [-self.ka, 0.0, 0.0],
            [self.ka, -(self.cl + self.q) / self.v1, self.q / self.v2],
            [0.0, self.q / self.v1, -self.q / self.v2],
        ]
    }
}

/// Drug amounts in the depot, central and peripheral compartments.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StateVector {
    pub x0: f64,
    pub x1: f64,
    pub x2: f64,
}

impl StateVector {
    pub const fn new(x0: f64, x1: f64, x2: f64) -> Self {
        Self { x0, x1, x2 }
    }

    /// Initial condition used throughout: the full dose sits in the depot.
    pub const fn unit_dose() -> Self {
        Self::new(1.0, 0.0, 0.0)
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x0, self.x1, self.x2]
    }

    pub fn is_finite(&self) -> bool {
        self.x0.is_finite() && self.x1.is_finite() && self.x2.is_finite()
    }

    fn axpy(self, a: f64, other: StateVector) -> StateVector {
        StateVector::new(
            self.x0 + a * other.x0,
            self.x1 + a * other.x1,
            self.x2 + a * other.x2,
        )
    }
}

impl From<[f64; 3]> for StateVector {
    fn from(v: [f64; 3]) -> Self {
        Self::new(v[0], v[1], v[2])
    }
}

/// A time grid with one state per time point.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    times: Vec<f64>,
    states: Vec<StateVector>,
}

impl Trajectory {
    pub fn new(times: Vec<f64>, states: Vec<StateVector>) -> Result<Self> {
        if times.len() != states.len() {
            return Err(Error::Shape(format!(
                "{} time points but {} states",
                times.len(),
                states.len()
            )));
        }
        check_grid(&times)?;
        Ok(Self { times, states })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn states(&self) -> &[StateVector] {
        &self.states
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Column `component` of the state matrix.
    pub fn component(&self, component: usize) -> Vec<f64> {
        self.states.iter().map(|s| s.to_array()[component]).collect()
    }

    fn select(&self, range: std::ops::Range<usize>) -> Trajectory {
        Trajectory {
            times: self.times[range.clone()].to_vec(),
            states: self.states[range].to_vec(),
        }
    }
}

/// A clean trajectory and its noise-perturbed counterpart on the same grid.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisyDataset {
    pub clean: Trajectory,
    pub noisy: Trajectory,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl NoisyDataset {
    pub fn times(&self) -> &[f64] {
        self.clean.times()
    }

    pub fn len(&self) -> usize {
        self.clean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clean.is_empty()
    }
}

fn check_grid(times: &[f64]) -> Result<()> {
    if let Some(t) = times.iter().find(|t| !t.is_finite()) {
        return Err(Error::InvalidGrid(format!("non-finite time point {t}")));
    }
    if let Some(w) = times.windows(2).find(|w| w[1] <= w[0]) {
        return Err(Error::InvalidGrid(format!(
            "times must be strictly increasing ({} followed by {})",
            w[0], w[1]
        )));
    }
    Ok(())
}

/// `n` uniformly spaced points on `[start, end]`, both ends included.
pub fn uniform_grid(start: f64, end: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![start],
        _ => {
            let step = (end - start) / (n - 1) as f64;
            (0..n)
                .map(|i| if i == n - 1 { end } else { start + step * i as f64 })
                .collect()
        }
    }
}

/// Right-hand side of the two-compartment system.
pub fn rhs(params: &PkParameters, state: &StateVector) -> StateVector {
    let absorption = params.ka * state.x0;
    let central_to_peripheral = params.q / params.v1 * state.x1;
    let peripheral_to_central = params.q / params.v2 * state.x2;
    let elimination = params.cl / params.v1 * state.x1;
    StateVector::new(
        -absorption,
        absorption - elimination - central_to_peripheral + peripheral_to_central,
        central_to_peripheral - peripheral_to_central,
    )
}

fn rk4_step(params: &PkParameters, x: StateVector, h: f64) -> StateVector {
    let k1 = rhs(params, &x);
    let k2 = rhs(params, &x.axpy(0.5 * h, k1));
    let k3 = rhs(params, &x.axpy(0.5 * h, k2));
    let k4 = rhs(params, &x.axpy(h, k3));
    StateVector::new(
        x.x0 + h / 6.0 * (k1.x0 + 2.0 * k2.x0 + 2.0 * k3.x0 + k4.x0),
        x.x1 + h / 6.0 * (k1.x1 + 2.0 * k2.x1 + 2.0 * k3.x1 + k4.x1),
        x.x2 + h / 6.0 * (k1.x2 + 2.0 * k2.x2 + 2.0 * k3.x2 + k4.x2),
    )
}

/// Classical RK4 with one step per grid interval.
pub fn integrate(params: &PkParameters, x_init: StateVector, t_grid: &[f64]) -> Result<Trajectory> {
    integrate_substeps(params, x_init, t_grid, 1)
}

/// Classical RK4 taking `substeps` equal steps inside every grid interval.
/// Output is sampled exactly on `t_grid`, with `states[0] == x_init`.
pub fn integrate_substeps(
    params: &PkParameters,
    x_init: StateVector,
    t_grid: &[f64],
    substeps: usize,
) -> Result<Trajectory> {
    params.validate()?;
    if t_grid.is_empty() {
        return Err(Error::InvalidGrid("empty time grid".into()));
    }
    if substeps == 0 {
        return Err(Error::InvalidArgument("substeps must be at least 1".into()));
    }
    check_grid(t_grid)?;

    let mut states = Vec::with_capacity(t_grid.len());
    let mut x = x_init;
    states.push(x);
    for w in t_grid.windows(2) {
        let h = (w[1] - w[0]) / substeps as f64;
        for _ in 0..substeps {
            x = rk4_step(params, x, h);
        }
        states.push(x);
    }
    Trajectory::new(t_grid.to_vec(), states)
}

/// Perturb every state entry with independent zero-mean Gaussian noise of
/// standard deviation `sigma`. Draws are taken row by row, `x0, x1, x2`.
pub fn add_noise(traj: &Trajectory, sigma: f64, seed: u64) -> Result<NoisyDataset> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "noise sigma must be finite and nonnegative, got {sigma}"
        )));
    }
    let noisy_states = if sigma == 0.0 {
        traj.states.clone()
    } else {
        let normal = Normal::new(0.0, sigma)
            .map_err(|e| Error::InvalidArgument(format!("noise distribution: {e}")))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        traj.states
            .iter()
            .map(|s| {
                StateVector::new(
                    s.x0 + normal.sample(&mut rng),
                    s.x1 + normal.sample(&mut rng),
                    s.x2 + normal.sample(&mut rng),
                )
            })
            .collect()
    };
    Ok(NoisyDataset {
        clean: traj.clone(),
        noisy: Trajectory {
            times: traj.times.clone(),
            states: noisy_states,
        },
        noise_sigma: sigma,
        seed,
    })
}

/// Split into `t < t_split` (train) and `t >= t_split` (test).
pub fn split_train_test(ds: &NoisyDataset, t_split: f64) -> Result<(NoisyDataset, NoisyDataset)> {
    let times = ds.times();
    let (first, last) = match (times.first(), times.last()) {
        (Some(&f), Some(&l)) => (f, l),
        _ => return Err(Error::InvalidArgument("cannot split an empty dataset".into())),
    };
    if !(t_split >= first && t_split <= last) {
        return Err(Error::InvalidArgument(format!(
            "split time {t_split} outside the grid range [{first}, {last}]"
        )));
    }
    let cut = times.partition_point(|&t| t < t_split);
    let part = |range: std::ops::Range<usize>| NoisyDataset {
        clean: ds.clean.select(range.clone()),
        noisy: ds.noisy.select(range),
        noise_sigma: ds.noise_sigma,
        seed: ds.seed,
    };
    Ok((part(0..cut), part(cut..times.len())))
}

/// Write a trajectory as CSV with header `t,x0,x1,x2`. Values use the
/// shortest representation that parses back to the same `f64`.
pub fn write_trajectory_csv(traj: &Trajectory, path: &Path) -> Result<()> {
    let mut out = String::from("t,x0,x1,x2\n");
    for (t, s) in traj.times.iter().zip(&traj.states) {
        out.push_str(&format!("{t},{},{},{}\n", s.x0, s.x1, s.x2));
    }
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(out.as_bytes()))
        .map_err(|e| Error::io(path, e))
}

pub fn read_trajectory_csv(path: &Path) -> Result<Trajectory> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let header = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    if header.iter().map(str::trim).ne(["t", "x0", "x1", "x2"]) {
        return Err(Error::parse(path, 1, "expected header `t,x0,x1,x2`"));
    }
    let mut times = Vec::new();
    let mut states = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let mut vals = [0.0; 4];
        for (slot, field) in vals.iter_mut().zip(record.iter()) {
            *slot = field
                .trim()
                .parse()
                .map_err(|_| Error::parse(path, line, format!("not a number: `{field}`")))?;
        }
        times.push(vals[0]);
        states.push(StateVector::new(vals[1], vals[2], vals[3]));
    }
    Trajectory::new(times, states).map_err(|e| Error::parse(path, 0, e.to_string()))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::parse(path, line, format!("{other:?}")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rhs_at_zero_state_is_zero() {
        let d = rhs(&PkParameters::default(), &StateVector::default());
        assert_eq!(d, StateVector::default());
    }

    #[test]
    fn rhs_hand_values() {
        let p = PkParameters::default();
        let d = rhs(&p, &StateVector::new(1.0, 0.0, 0.0));
        assert!((d.x0 + 1.14).abs() < 1e-15);
        assert!((d.x1 - 1.14).abs() < 1e-15);
        assert_eq!(d.x2, 0.0);

        let d = rhs(&p, &StateVector::new(0.0, 1.0, 0.0));
        assert_eq!(d.x0, 0.0);
        assert!((d.x1 + 4.71 / 0.454).abs() < 1e-12);
        assert!((d.x1 + 10.374_449_339_207_05).abs() < 1e-9);
        assert!((d.x2 - 2.511_013_215_859_03).abs() < 1e-9);
    }

    #[test]
    fn parameters_reject_nonpositive() {
        assert!(PkParameters::new(1.0, 1.0, 0.0, 1.0, 1.0).is_err());
        assert!(PkParameters::new(1.0, f64::NAN, 1.0, 1.0, 1.0).is_err());
        assert!(PkParameters::new(1.0, 1.0, 1.0, 1.0, 1.0).is_ok());
    }

    #[test]
    fn single_point_grid_returns_initial_state() {
        let x = StateVector::unit_dose();
        let traj = integrate(&PkParameters::default(), x, &[0.0]).unwrap();
        assert_eq!(traj.len(), 1);
        assert_eq!(traj.states()[0], x);
    }

    #[test]
    fn depot_matches_analytic_decay() {
        let grid = uniform_grid(0.0, 1.0, 101);
        let traj = integrate(&PkParameters::default(), StateVector::unit_dose(), &grid).unwrap();
        let last = traj.states().last().unwrap().x0;
        assert!((last - (-1.14f64).exp()).abs() < 1e-6);
        assert!((last - 0.319_819).abs() < 1e-5);
    }

    #[test]
    fn long_run_decays_and_stays_nonnegative() {
        let p = PkParameters::default();
        let grid = uniform_grid(0.0, 10.0, 101);
        let traj = integrate(&p, StateVector::unit_dose(), &grid).unwrap();

        // Brute-force oracle: tiny-step RK4 over the same horizon.
        let oracle = integrate_substeps(&p, StateVector::unit_dose(), &[0.0, 10.0], 100_000).unwrap();
        let end = traj.states().last().unwrap().to_array();
        let want = oracle.states()[1].to_array();
        for i in 0..3 {
            assert!((end[i] - want[i]).abs() < 1e-4, "component {i}");
            assert!(end[i] < 0.05);
        }
        for s in traj.states() {
            for v in s.to_array() {
                assert!(v >= -1e-9);
            }
        }
    }

    #[test]
    fn rejects_non_increasing_grid() {
        let p = PkParameters::default();
        let err = integrate(&p, StateVector::unit_dose(), &[0.0, 1.0, 1.0]).unwrap_err();
        assert!(matches!(err, Error::InvalidGrid(_)));
        assert!(integrate(&p, StateVector::unit_dose(), &[1.0, 0.5]).is_err());
    }

    #[test]
    fn rk4_is_fourth_order() {
        let p = PkParameters::default();
        let err_at = |n: usize| {
            let grid = uniform_grid(0.0, 1.0, n + 1);
            let traj = integrate(&p, StateVector::unit_dose(), &grid).unwrap();
            (traj.states()[n].x0 - (-1.14f64).exp()).abs()
        };
        let order = (err_at(10) / err_at(20)).log2();
        assert!((3.7..=4.3).contains(&order), "order {order}");
    }

    fn sample_traj() -> Trajectory {
        let grid = uniform_grid(0.0, 10.0, 100);
        integrate_substeps(&PkParameters::default(), StateVector::unit_dose(), &grid, 10).unwrap()
    }

    #[test]
    fn zero_noise_is_exact_copy() {
        let traj = sample_traj();
        let ds = add_noise(&traj, 0.0, 99).unwrap();
        assert_eq!(ds.noisy, ds.clean);
    }

    #[test]
    fn noise_is_seeded() {
        let traj = sample_traj();
        assert_eq!(add_noise(&traj, 0.005, 1).unwrap(), add_noise(&traj, 0.005, 1).unwrap());
        assert_ne!(add_noise(&traj, 0.005, 1).unwrap(), add_noise(&traj, 0.005, 2).unwrap());
        assert!(matches!(add_noise(&traj, -0.1, 1), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn noise_standard_deviation() {
        let grid = uniform_grid(0.0, 10.0, 334);
        let traj = integrate(&PkParameters::default(), StateVector::unit_dose(), &grid).unwrap();
        let ds = add_noise(&traj, 0.02, 7).unwrap();
        let diffs: Vec<f64> = ds
            .noisy
            .states()
            .iter()
            .zip(ds.clean.states())
            .flat_map(|(n, c)| [n.x0 - c.x0, n.x1 - c.x1, n.x2 - c.x2])
            .collect();
        assert!(diffs.len() >= 1000);
        let mean = diffs.iter().sum::<f64>() / diffs.len() as f64;
        let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (diffs.len() - 1) as f64;
        assert!((var.sqrt() - 0.02).abs() < 0.002);
    }

    #[test]
    fn split_at_eight_is_eighty_twenty() {
        let ds = add_noise(&sample_traj(), 0.005, 1).unwrap();
        let (train, test) = split_train_test(&ds, 8.0).unwrap();
        assert_eq!((train.len(), test.len()), (80, 20));
        assert!(train.times().iter().all(|&t| t < 8.0));
        assert!(test.times().iter().all(|&t| t >= 8.0));
        assert_eq!(train.noisy.states()[3], ds.noisy.states()[3]);
        assert_eq!(test.clean.states()[0], ds.clean.states()[80]);
    }

    #[test]
    fn split_boundaries() {
        let ds = add_noise(&sample_traj(), 0.005, 1).unwrap();
        let (train, test) = split_train_test(&ds, 0.0).unwrap();
        assert!(train.is_empty());
        assert_eq!(test.len(), 100);
        assert!(split_train_test(&ds, 10.0 + 1e-9).is_err());
        assert!(split_train_test(&ds, -1.0).is_err());
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("noisy.csv");
        let ds = add_noise(&sample_traj(), 0.01, 3).unwrap();
        write_trajectory_csv(&ds.noisy, &path).unwrap();
        let back = read_trajectory_csv(&path).unwrap();
        assert_eq!(back, ds.noisy);
    }

    #[test]
    fn csv_parse_error_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "t,x0,x1,x2\n0,1,0,0\n0.1,abc,0,0\n").unwrap();
        match read_trajectory_csv(&path) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    proptest! {
        #[test]
        fn mass_balance(x0 in -5.0f64..5.0, x1 in -5.0f64..5.0, x2 in -5.0f64..5.0) {
            let p = PkParameters::default();
            let d = rhs(&p, &StateVector::new(x0, x1, x2));
            let sum = d.x0 + d.x1 + d.x2;
            prop_assert!((sum + p.cl / p.v1 * x1).abs() < 1e-12);
        }

        #[test]
        fn depot_strictly_decreasing(n in 100usize..400) {
            let grid = uniform_grid(0.0, 10.0, n);
            let traj = integrate(&PkParameters::default(), StateVector::unit_dose(), &grid).unwrap();
            prop_assert!(traj.states().windows(2).all(|w| w[1].x0 < w[0].x0));
        }

        #[test]
        fn nonnegative_from_nonnegative_start(a in 0.0f64..2.0, b in 0.0f64..2.0, c in 0.0f64..2.0) {
            let grid = uniform_grid(0.0, 10.0, 101);
            let traj = integrate(&PkParameters::default(), StateVector::new(a, b, c), &grid).unwrap();
            for s in traj.states() {
                prop_assert!(s.x0 >= -1e-9 && s.x1 >= -1e-9 && s.x2 >= -1e-9);
            }
        }
    }
}
