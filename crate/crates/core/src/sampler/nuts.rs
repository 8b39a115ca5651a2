//! One No-U-Turn transition: multinomial trajectory sampling with the
//! generalised no-U-turn criterion, checked across subtree boundaries.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::LogDensity;

const MAX_DELTA_H: f64 = 1000.0;

/// Position with its log density and gradient.
#[derive(Debug, Clone)]
pub(crate) struct Point {
    pub q: Vec<f64>,
    pub logp: f64,
    pub grad: Vec<f64>,
}

/// Outcome of one transition.
#[derive(Debug, Clone, Copy)]
pub(crate) struct TransitionInfo {
    pub accept_stat: f64,
    pub depth: usize,
    pub n_leapfrog: usize,
    pub divergent: bool,
}

pub(crate) struct Nuts<'a, T: LogDensity + ?Sized> {
    pub target: &'a T,
    pub inv_metric: Vec<f64>,
    pub step_size: f64,
    pub max_depth: usize,
}

/// Phase-space state during trajectory building.
#[derive(Clone)]
struct State {
    pt: Point,
    p: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn add_into(acc: &mut [f64], x: &[f64]) {
    acc.iter_mut().zip(x).for_each(|(a, b)| *a += b);
}

fn sum(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

fn log_sum_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

fn criterion(p_sharp_minus: &[f64], p_sharp_plus: &[f64], rho: &[f64]) -> bool {
    dot(p_sharp_plus, rho) > 0.0 && dot(p_sharp_minus, rho) > 0.0
}

/// Mutable bookkeeping shared by a whole trajectory.
struct Walk {
    h0: f64,
    n_leapfrog: usize,
    sum_metro_prob: f64,
    divergent: bool,
}

impl<T: LogDensity + ?Sized> Nuts<'_, T> {
    pub fn evaluate(&self, q: Vec<f64>) -> Point {
        let mut grad = vec![0.0; q.len()];
        let logp = match self.target.log_density_and_grad(&q, &mut grad) {
            Ok(v) if v.is_finite() && grad.iter().all(|g| g.is_finite()) => v,
            _ => f64::NEG_INFINITY,
        };
        Point { q, logp, grad }
    }

    fn p_sharp(&self, p: &[f64]) -> Vec<f64> {
        p.iter().zip(&self.inv_metric).map(|(a, m)| a * m).collect()
    }

    fn hamiltonian(&self, s: &State) -> f64 {
        let kinetic = 0.5 * dot(&s.p, &self.p_sharp(&s.p));
        let h = -s.pt.logp + kinetic;
        if h.is_nan() {
            f64::INFINITY
        } else {
            h
        }
    }

    fn sample_momentum(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        self.inv_metric
            .iter()
            .map(|m| rng.sample::<f64, _>(StandardNormal) / m.sqrt())
            .collect()
    }

    fn leapfrog(&self, s: &mut State, eps: f64) {
        for (p, g) in s.p.iter_mut().zip(&s.pt.grad) {
            *p += 0.5 * eps * g;
        }
        if !s.pt.logp.is_finite() {
            return;
        }
        let q: Vec<f64> = s
            .pt
            .q
            .iter()
            .zip(&s.p)
            .zip(&self.inv_metric)
            .map(|((q, p), m)| q + eps * m * p)
            .collect();
        s.pt = self.evaluate(q);
        if !s.pt.logp.is_finite() {
            return;
        }
        for (p, g) in s.p.iter_mut().zip(&s.pt.grad) {
            *p += 0.5 * eps * g;
        }
    }

    /// Heuristic doubling/halving until a single step crosses acceptance 0.8.
    pub fn init_step_size(&mut self, start: &Point, rng: &mut ChaCha8Rng) {
        let threshold = 0.8f64.ln();
        let mut direction = 0i32;
        loop {
            let mut s = State {
                pt: start.clone(),
                p: self.sample_momentum(rng),
            };
            let h0 = self.hamiltonian(&s);
            self.leapfrog(&mut s, self.step_size);
            let delta_h = h0 - self.hamiltonian(&s);
            let up = delta_h > threshold;
            if direction == 0 {
                direction = if up { 1 } else { -1 };
            } else if (direction == 1 && !up) || (direction == -1 && up) {
                break;
            }
            self.step_size *= if direction == 1 { 2.0 } else { 0.5 };
            if self.step_size > 1e7 || self.step_size < 1e-12 {
                self.step_size = self.step_size.clamp(1e-12, 1e7);
                break;
            }
        }
    }

    pub fn transition(&self, start: &Point, rng: &mut ChaCha8Rng) -> (Point, TransitionInfo) {
        let p0 = self.sample_momentum(rng);
        let init = State {
            pt: start.clone(),
            p: p0.clone(),
        };
        let mut walk = Walk {
            h0: self.hamiltonian(&init),
            n_leapfrog: 0,
            sum_metro_prob: 0.0,
            divergent: false,
        };
        let ps0 = self.p_sharp(&p0);
        let mut fwd = init.clone();
        let mut bck = init.clone();
        let mut sample = start.clone();

        let (mut p_fwd_fwd, mut p_sharp_fwd_fwd) = (p0.clone(), ps0.clone());
        let (mut p_fwd_bck, mut p_sharp_fwd_bck) = (p0.clone(), ps0.clone());
        let (mut p_bck_fwd, mut p_sharp_bck_fwd) = (p0.clone(), ps0.clone());
        let (mut p_bck_bck, mut p_sharp_bck_bck) = (p0.clone(), ps0);
        let mut rho = p0;
        let mut log_sum_weight = 0.0;
        let mut depth = 0;

        while depth < self.max_depth {
            let mut rho_fwd = vec![0.0; rho.len()];
            let mut rho_bck = vec![0.0; rho.len()];
            let mut lsw_subtree = f64::NEG_INFINITY;
            let mut propose = start.clone();
            let valid = if rng.random::<f64>() > 0.5 {
                rho_bck.clone_from(&rho);
                p_bck_fwd.clone_from(&p_fwd_bck);
                p_sharp_bck_fwd.clone_from(&p_sharp_fwd_bck);
                self.build_tree(
                    depth,
                    &mut fwd,
                    &mut propose,
                    &mut p_sharp_fwd_bck,
                    &mut p_sharp_fwd_fwd,
                    &mut rho_fwd,
                    &mut p_fwd_bck,
                    &mut p_fwd_fwd,
                    1.0,
                    &mut walk,
                    &mut lsw_subtree,
                    rng,
                )
            } else {
                rho_fwd.clone_from(&rho);
                p_fwd_bck.clone_from(&p_bck_fwd);
                p_sharp_fwd_bck.clone_from(&p_sharp_bck_fwd);
                self.build_tree(
                    depth,
                    &mut bck,
                    &mut propose,
                    &mut p_sharp_bck_fwd,
                    &mut p_sharp_bck_bck,
                    &mut rho_bck,
                    &mut p_bck_fwd,
                    &mut p_bck_bck,
                    -1.0,
                    &mut walk,
                    &mut lsw_subtree,
                    rng,
                )
            };
            if !valid {
                break;
            }
            depth += 1;
            if lsw_subtree > log_sum_weight {
                sample = propose;
            } else {
                let accept = (lsw_subtree - log_sum_weight).exp();
                if rng.random::<f64>() < accept {
                    sample = propose;
                }
            }
            log_sum_weight = log_sum_exp(log_sum_weight, lsw_subtree);
            rho = sum(&rho_bck, &rho_fwd);
            let mut persist = criterion(&p_sharp_bck_bck, &p_sharp_fwd_fwd, &rho);
            let rho_ext = sum(&rho_bck, &p_fwd_bck);
            persist &= criterion(&p_sharp_bck_bck, &p_sharp_fwd_bck, &rho_ext);
            let rho_ext = sum(&rho_fwd, &p_bck_fwd);
            persist &= criterion(&p_sharp_bck_fwd, &p_sharp_fwd_fwd, &rho_ext);
            if !persist {
                break;
            }
        }
        let accept_stat = if walk.n_leapfrog > 0 {
            walk.sum_metro_prob / walk.n_leapfrog as f64
        } else {
            0.0
        };
        (
            sample,
            TransitionInfo {
                accept_stat,
                depth,
                n_leapfrog: walk.n_leapfrog,
                divergent: walk.divergent,
            },
        )
    }

    #[allow(clippy::too_many_arguments)]
    fn build_tree(
        &self,
        depth: usize,
        state: &mut State,
        propose: &mut Point,
        p_sharp_beg: &mut Vec<f64>,
        p_sharp_end: &mut Vec<f64>,
        rho: &mut Vec<f64>,
        p_beg: &mut Vec<f64>,
        p_end: &mut Vec<f64>,
        sign: f64,
        walk: &mut Walk,
        log_sum_weight: &mut f64,
        rng: &mut ChaCha8Rng,
    ) -> bool {
        if depth == 0 {
            self.leapfrog(state, sign * self.step_size);
            walk.n_leapfrog += 1;
            let h = self.hamiltonian(state);
            if h - walk.h0 > MAX_DELTA_H {
                walk.divergent = true;
            }
            let log_w = walk.h0 - h;
            *log_sum_weight = log_sum_exp(*log_sum_weight, log_w);
            walk.sum_metro_prob += if log_w > 0.0 { 1.0 } else { log_w.exp() };
            propose.clone_from(&state.pt);
            *p_sharp_beg = self.p_sharp(&state.p);
            p_sharp_end.clone_from(p_sharp_beg);
            add_into(rho, &state.p);
            p_beg.clone_from(&state.p);
            p_end.clone_from(p_beg);
            return !walk.divergent;
        }
        let n = rho.len();

        let mut p_init_end = vec![0.0; n];
        let mut p_sharp_init_end = vec![0.0; n];
        let mut rho_init = vec![0.0; n];
        let mut lsw_init = f64::NEG_INFINITY;
        if !self.build_tree(
            depth - 1,
            state,
            propose,
            p_sharp_beg,
            &mut p_sharp_init_end,
            &mut rho_init,
            p_beg,
            &mut p_init_end,
            sign,
            walk,
            &mut lsw_init,
            rng,
        ) {
            return false;
        }

        let mut propose_final = state.pt.clone();
        let mut p_final_beg = vec![0.0; n];
        let mut p_sharp_final_beg = vec![0.0; n];
        let mut rho_final = vec![0.0; n];
        let mut lsw_final = f64::NEG_INFINITY;
        if !self.build_tree(
            depth - 1,
            state,
            &mut propose_final,
            &mut p_sharp_final_beg,
            p_sharp_end,
            &mut rho_final,
            &mut p_final_beg,
            p_end,
            sign,
            walk,
            &mut lsw_final,
            rng,
        ) {
            return false;
        }

        let lsw_subtree = log_sum_exp(lsw_init, lsw_final);
        *log_sum_weight = log_sum_exp(*log_sum_weight, lsw_subtree);
        let accept = (lsw_final - lsw_subtree).exp();
        if rng.random::<f64>() < accept {
            *propose = propose_final;
        }

        let rho_subtree = sum(&rho_init, &rho_final);
        add_into(rho, &rho_subtree);
        let mut persist = criterion(p_sharp_beg, p_sharp_end, &rho_subtree);
        let rho_ext = sum(&rho_init, &p_final_beg);
        persist &= criterion(p_sharp_beg, &p_sharp_final_beg, &rho_ext);
        let rho_ext = sum(&rho_final, &p_init_end);
        persist &= criterion(&p_sharp_init_end, p_sharp_end, &rho_ext);
        persist
    }
}
