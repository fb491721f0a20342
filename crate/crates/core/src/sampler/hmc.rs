//! Static-trajectory HMC with jittered step counts, dual-averaging step size
//! adaptation and a windowed diagonal mass matrix.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Hamiltonian error beyond which a transition is flagged divergent.
pub const DIVERGENCE_THRESHOLD: f64 = 1000.0;

/// A differentiable log-density over `R^dim`.
pub trait LogDensity: Sync {
    fn dim(&self) -> usize;

    /// Returns `log p(x)` and writes `∇ log p(x)` into `grad`. May return a
    /// non-finite value outside the support.
    fn log_density_and_grad(&self, x: &[f64], grad: &mut [f64]) -> f64;
}

impl LogDensity for crate::model::Model {
    fn dim(&self) -> usize {
        self.parameterization().dim()
    }

    fn log_density_and_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        crate::model::Model::log_density_and_grad(self, x, grad)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HmcSettings {
    pub num_warmup: usize,
    pub num_draws: usize,
    /// Mean number of leapfrog steps; each transition draws uniformly from
    /// `[⌈steps/2⌉, ⌊3·steps/2⌋]`.
    pub steps: usize,
    /// Trajectories never exceed `2^max_tree_depth` steps.
    pub max_tree_depth: u32,
    pub target_accept: f64,
}

/// Phase-space point with cached log-density and gradient.
#[derive(Debug, Clone)]
pub struct Point {
    pub position: Vec<f64>,
    pub momentum: Vec<f64>,
    pub log_density: f64,
    pub grad: Vec<f64>,
}

impl Point {
    pub fn new<T: LogDensity + ?Sized>(target: &T, position: Vec<f64>, momentum: Vec<f64>) -> Self {
        let mut grad = vec![0.0; position.len()];
        let log_density = target.log_density_and_grad(&position, &mut grad);
        Self {
            position,
            momentum,
            log_density,
            grad,
        }
    }

    pub fn kinetic_energy(&self, inv_mass: &[f64]) -> f64 {
        0.5 * self
            .momentum
            .iter()
            .zip(inv_mass)
            .map(|(p, m)| p * p * m)
            .sum::<f64>()
    }

    pub fn hamiltonian(&self, inv_mass: &[f64]) -> f64 {
        -self.log_density + self.kinetic_energy(inv_mass)
    }
}

/// Runs `steps` leapfrog steps in place. Stops early, returning `false`,
/// once the log-density stops being finite.
pub fn leapfrog<T: LogDensity + ?Sized>(
    target: &T,
    point: &mut Point,
    step_size: f64,
    inv_mass: &[f64],
    steps: usize,
) -> bool {
    let half = 0.5 * step_size;
    for _ in 0..steps {
        for (p, g) in point.momentum.iter_mut().zip(&point.grad) {
            *p += half * g;
        }
        for ((q, p), m) in point.position.iter_mut().zip(&point.momentum).zip(inv_mass) {
            *q += step_size * m * p;
        }
        point.log_density = target.log_density_and_grad(&point.position, &mut point.grad);
        if !point.log_density.is_finite() {
            return false;
        }
        for (p, g) in point.momentum.iter_mut().zip(&point.grad) {
            *p += half * g;
        }
    }
    true
}

/// Dual averaging of `log ε` towards a target acceptance statistic.
#[derive(Debug, Clone)]
pub struct DualAveraging {
    target: f64,
    mu: f64,
    log_step: f64,
    log_step_bar: f64,
    h_bar: f64,
    count: f64,
}

impl DualAveraging {
    const GAMMA: f64 = 0.05;
    const T0: f64 = 10.0;
    const KAPPA: f64 = 0.75;

    pub fn new(initial_step: f64, target: f64) -> Self {
        Self {
            target,
            mu: (10.0 * initial_step).ln(),
            log_step: initial_step.ln(),
            log_step_bar: 0.0,
            h_bar: 0.0,
            count: 0.0,
        }
    }

    pub fn restart(&mut self, step: f64) {
        *self = Self::new(step, self.target);
    }

    pub fn update(&mut self, accept_stat: f64) {
        self.count += 1.0;
        let t = self.count;
        let eta = 1.0 / (t + Self::T0);
        self.h_bar = (1.0 - eta) * self.h_bar + eta * (self.target - accept_stat);
        self.log_step = self.mu - t.sqrt() / Self::GAMMA * self.h_bar;
        let w = t.powf(-Self::KAPPA);
        self.log_step_bar = w * self.log_step + (1.0 - w) * self.log_step_bar;
    }

    pub fn current(&self) -> f64 {
        self.log_step.exp()
    }

    pub fn adapted(&self) -> f64 {
        self.log_step_bar.exp()
    }
}

/// Online mean/variance.
#[derive(Debug, Clone)]
struct Welford {
    count: f64,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Welford {
    fn new(dim: usize) -> Self {
        Self {
            count: 0.0,
            mean: vec![0.0; dim],
            m2: vec![0.0; dim],
        }
    }

    fn push(&mut self, x: &[f64]) {
        self.count += 1.0;
        for ((m, s), &v) in self.mean.iter_mut().zip(&mut self.m2).zip(x) {
            let delta = v - *m;
            *m += delta / self.count;
            *s += delta * (v - *m);
        }
    }

    /// Sample variance shrunk towards `1e-3`.
    fn regularized_variance(&self) -> Vec<f64> {
        let n = self.count;
        self.m2
            .iter()
            .map(|s| {
                let var = s / (n - 1.0);
                (n / (n + 5.0)) * var + 1e-3 * (5.0 / (n + 5.0))
            })
            .collect()
    }
}

/// Warm-up schedule: a fast initial buffer, doubling slow windows for the
/// mass matrix, and a fast terminal buffer.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct WarmupSchedule {
    /// Iteration indices (exclusive ends) at which slow windows close.
    window_ends: Vec<usize>,
    window_starts: Vec<usize>,
}

impl WarmupSchedule {
    pub(crate) fn new(num_warmup: usize) -> Self {
        let (init, term, base) = if num_warmup < 20 {
            return Self {
                window_ends: Vec::new(),
                window_starts: Vec::new(),
            };
        } else if num_warmup < 150 {
            let init = (0.15 * num_warmup as f64) as usize;
            let term = (0.1 * num_warmup as f64) as usize;
            (init, term, num_warmup - init - term)
        } else {
            (75, 50, 25)
        };
        let last = num_warmup - term;
        let mut starts = Vec::new();
        let mut ends = Vec::new();
        let mut start = init;
        let mut size = base;
        while start < last {
            let mut end = start + size;
            // Absorb a remainder too short for its own doubled window.
            if end + 2 * size > last {
                end = last;
            }
            starts.push(start);
            ends.push(end);
            start = end;
            size *= 2;
        }
        Self {
            window_ends: ends,
            window_starts: starts,
        }
    }

    fn in_slow_window(&self, it: usize) -> bool {
        self.window_starts
            .iter()
            .zip(&self.window_ends)
            .any(|(&s, &e)| it >= s && it < e)
    }

    fn closes_window(&self, it: usize) -> bool {
        self.window_ends.contains(&(it + 1))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub accept_stat: f64,
    pub divergent: bool,
    pub steps: usize,
    pub energy: f64,
}

/// Raw output of one chain, post-warmup draws in the target's coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainOutput {
    pub draws: Vec<Vec<f64>>,
    pub transitions: Vec<Transition>,
    pub step_size: f64,
    pub inv_mass: Vec<f64>,
    pub warmup_divergences: usize,
}

impl ChainOutput {
    pub fn mean_accept(&self) -> f64 {
        let n = self.transitions.len().max(1) as f64;
        self.transitions.iter().map(|t| t.accept_stat).sum::<f64>() / n
    }

    pub fn divergences(&self) -> usize {
        self.transitions.iter().filter(|t| t.divergent).count()
    }
}

fn draw_momentum<R: Rng + ?Sized>(rng: &mut R, inv_mass: &[f64]) -> Vec<f64> {
    inv_mass
        .iter()
        .map(|m| {
            let z: f64 = rng.sample(StandardNormal);
            z / m.sqrt()
        })
        .collect()
}

fn transition<T: LogDensity + ?Sized, R: Rng + ?Sized>(
    target: &T,
    current: &mut Point,
    step_size: f64,
    inv_mass: &[f64],
    settings: &HmcSettings,
    rng: &mut R,
) -> Transition {
    current.momentum = draw_momentum(rng, inv_mass);
    let h0 = current.hamiltonian(inv_mass);
    let base = settings.steps.max(1);
    let lo = base.div_ceil(2).max(1);
    let hi = (3 * base / 2).max(lo);
    let cap = 1usize << settings.max_tree_depth.min(20);
    let steps = rng.random_range(lo..=hi).min(cap);

    let mut proposal = current.clone();
    let finite = leapfrog(target, &mut proposal, step_size, inv_mass, steps);
    let h1 = if finite {
        proposal.hamiltonian(inv_mass)
    } else {
        f64::INFINITY
    };
    let delta = h1 - h0;
    let divergent = !delta.is_finite() || delta > DIVERGENCE_THRESHOLD;
    let accept_stat = if delta.is_nan() { 0.0 } else { (-delta).exp().min(1.0) };
    let u: f64 = rng.random();
    let accepted = !divergent && u < accept_stat;
    if accepted {
        *current = proposal;
    }
    Transition {
        accept_stat,
        divergent,
        steps,
        energy: current.hamiltonian(inv_mass),
    }
}

/// Doubles or halves `ε` until a single leapfrog step crosses acceptance ½.
fn reasonable_step_size<T: LogDensity + ?Sized, R: Rng + ?Sized>(
    target: &T,
    start: &Point,
    initial: f64,
    inv_mass: &[f64],
    rng: &mut R,
) -> f64 {
    let mut eps = initial;
    let mut probe = start.clone();
    probe.momentum = draw_momentum(rng, inv_mass);
    let h0 = probe.hamiltonian(inv_mass);
    let log_accept = |eps: f64| {
        let mut p = probe.clone();
        if leapfrog(target, &mut p, eps, inv_mass, 1) {
            let v = h0 - p.hamiltonian(inv_mass);
            if v.is_nan() { f64::NEG_INFINITY } else { v }
        } else {
            f64::NEG_INFINITY
        }
    };
    let direction = if log_accept(eps) > 0.5f64.ln() { 1.0 } else { -1.0 };
    for _ in 0..100 {
        let la = log_accept(eps);
        if direction > 0.0 && la <= 0.5f64.ln() || direction < 0.0 && la >= 0.5f64.ln() {
            break;
        }
        eps *= 2f64.powf(direction);
        if !(1e-10..=1e7).contains(&eps) {
            break;
        }
    }
    eps.clamp(1e-10, 1e7)
}

/// Runs one chain from `init`: adaptation during warm-up, then fixed `ε` and mass.
pub fn run_chain<T: LogDensity + ?Sized, R: Rng + ?Sized>(
    target: &T,
    init: Vec<f64>,
    settings: &HmcSettings,
    rng: &mut R,
) -> Result<ChainOutput> {
    let dim = target.dim();
    if init.len() != dim {
        return Err(Error::DimensionMismatch(format!(
            "initial point has length {}, target has dimension {dim}",
            init.len()
        )));
    }
    let mut inv_mass = vec![1.0; dim];
    let mut current = Point::new(target, init, vec![0.0; dim]);
    if !current.log_density.is_finite() {
        return Err(Error::NonFiniteDensity(1));
    }

    let mut step_size = reasonable_step_size(target, &current, 1.0, &inv_mass, rng);
    let mut adapter = DualAveraging::new(step_size, settings.target_accept);
    let schedule = WarmupSchedule::new(settings.num_warmup);
    let mut window = Welford::new(dim);
    let mut warmup_divergences = 0;

    for it in 0..settings.num_warmup {
        let t = transition(target, &mut current, step_size, &inv_mass, settings, rng);
        warmup_divergences += usize::from(t.divergent);
        adapter.update(t.accept_stat);
        step_size = adapter.adapted();
        if schedule.in_slow_window(it) {
            window.push(&current.position);
        }
        if schedule.closes_window(it) {
            inv_mass = window.regularized_variance();
            window = Welford::new(dim);
            step_size = adapter.adapted();
            adapter.restart(step_size);
        }
    }
    if settings.num_warmup > 0 {
        step_size = adapter.adapted();
    }

    let mut draws = Vec::with_capacity(settings.num_draws);
    let mut transitions = Vec::with_capacity(settings.num_draws);
    for _ in 0..settings.num_draws {
        let t = transition(target, &mut current, step_size, &inv_mass, settings, rng);
        draws.push(current.position.clone());
        transitions.push(t);
    }
    Ok(ChainOutput {
        draws,
        transitions,
        step_size,
        inv_mass,
        warmup_divergences,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    struct Gaussian {
        sd: Vec<f64>,
    }

    impl LogDensity for Gaussian {
        fn dim(&self) -> usize {
            self.sd.len()
        }

        fn log_density_and_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
            let mut lp = 0.0;
            for i in 0..x.len() {
                let z = x[i] / self.sd[i];
                lp -= 0.5 * z * z;
                grad[i] = -x[i] / (self.sd[i] * self.sd[i]);
            }
            lp
        }
    }

    #[test]
    fn schedule_windows_cover_middle() {
        let s = WarmupSchedule::new(1000);
        assert_eq!(s.window_starts[0], 75);
        assert_eq!(*s.window_ends.last().unwrap(), 950);
        for w in s.window_starts.iter().skip(1).zip(&s.window_ends) {
            assert_eq!(w.0, w.1);
        }
        assert!(WarmupSchedule::new(10).window_ends.is_empty());
        let short = WarmupSchedule::new(100);
        assert_eq!(short.window_starts, vec![15]);
        assert_eq!(short.window_ends, vec![90]);
    }

    #[test]
    fn leapfrog_is_reversible() {
        let target = Gaussian { sd: vec![1.0, 3.0, 0.5] };
        let inv_mass = [1.0, 2.0, 0.7];
        let mut p = Point::new(&target, vec![0.3, -1.0, 0.2], vec![1.1, -0.4, 0.9]);
        let start = p.clone();
        assert!(leapfrog(&target, &mut p, 0.1, &inv_mass, 25));
        p.momentum.iter_mut().for_each(|m| *m = -*m);
        assert!(leapfrog(&target, &mut p, 0.1, &inv_mass, 25));
        for (a, b) in p.position.iter().zip(&start.position) {
            assert!((a - b).abs() < 1e-8);
        }
        for (a, b) in p.momentum.iter().zip(&start.momentum) {
            assert!((a + b).abs() < 1e-8);
        }
    }

    #[test]
    fn energy_drift_small_at_tiny_step() {
        let target = Gaussian { sd: vec![1.0, 2.0] };
        let inv_mass = [1.0, 1.0];
        let mut p = Point::new(&target, vec![1.0, -0.5], vec![0.3, 0.8]);
        let h0 = p.hamiltonian(&inv_mass);
        leapfrog(&target, &mut p, 1e-3, &inv_mass, 1000);
        assert!((p.hamiltonian(&inv_mass) - h0).abs() < 1e-4);
    }

    #[test]
    fn dual_averaging_moves_towards_target() {
        let mut da = DualAveraging::new(1.0, 0.8);
        for _ in 0..50 {
            da.update(0.1);
        }
        assert!(da.current() < 1.0);
        let mut da = DualAveraging::new(1.0, 0.8);
        for _ in 0..50 {
            da.update(1.0);
        }
        assert!(da.current() > 1.0);
    }

    #[test]
    fn adapts_mass_to_scales() {
        let target = Gaussian { sd: vec![0.1, 10.0] };
        let settings = HmcSettings {
            num_warmup: 600,
            num_draws: 200,
            steps: 10,
            max_tree_depth: 10,
            target_accept: 0.8,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let out = run_chain(&target, vec![0.0, 0.0], &settings, &mut rng).unwrap();
        assert!(out.inv_mass[1] / out.inv_mass[0] > 1000.0, "{:?}", out.inv_mass);
    }

    #[test]
    fn rejects_bad_initial_point() {
        struct Nowhere;
        impl LogDensity for Nowhere {
            fn dim(&self) -> usize {
                1
            }
            fn log_density_and_grad(&self, _: &[f64], g: &mut [f64]) -> f64 {
                g[0] = 0.0;
                f64::NEG_INFINITY
            }
        }
        let settings = HmcSettings {
            num_warmup: 10,
            num_draws: 10,
            steps: 4,
            max_tree_depth: 5,
            target_accept: 0.8,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            run_chain(&Nowhere, vec![0.0], &settings, &mut rng),
            Err(Error::NonFiniteDensity(_))
        ));
    }
}
