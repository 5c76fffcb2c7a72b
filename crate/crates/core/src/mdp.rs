//! Explicit-table MDPs and exact value iteration. This is the test oracle
//! the rest of the toolkit is checked against.

use crate::error::{Error, Result};
use crate::num::{real, Real};
use rand::Rng;

const ROW_TOL: f64 = 1e-12;

/// Finite MDP in explicit-table form: `p` and `r` are flattened `[s][a][s']`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mdp<T> {
    pub n_states: usize,
    pub n_actions: usize,
    pub p: Vec<T>,
    pub r: Vec<T>,
    pub d0: Vec<T>,
    pub terminal: Vec<bool>,
}

impl<T: Real> Mdp<T> {
    #[inline]
    pub fn idx(&self, s: usize, a: usize, s2: usize) -> usize {
        (s * self.n_actions + a) * self.n_states + s2
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_states;
        if self.p.len() != n * self.n_actions * n || self.r.len() != self.p.len() {
            return Err(Error::Validation("P/R table shape mismatch".into()));
        }
        if self.d0.len() != n || self.terminal.len() != n {
            return Err(Error::Validation("d0/terminal length mismatch".into()));
        }
        let tol = real::<T>(ROW_TOL);
        for s in 0..n {
            for a in 0..self.n_actions {
                let row = &self.p[self.idx(s, a, 0)..self.idx(s, a, 0) + n];
                if row.iter().any(|&x| x < T::zero()) {
                    return Err(Error::Validation(format!(
                        "negative probability in P row (s={s}, a={a})"
                    )));
                }
                let sum: T = row.iter().sum();
                if (sum - T::one()).abs() > tol {
                    return Err(Error::Validation(format!(
                        "P row (s={s}, a={a}) sums to {sum}, expected 1"
                    )));
                }
            }
        }
        let d0_sum: T = self.d0.iter().sum();
        if (d0_sum - T::one()).abs() > tol || self.d0.iter().any(|&x| x < T::zero()) {
            return Err(Error::Validation("d0 is not a probability distribution".into()));
        }
        Ok(())
    }

    /// One Bellman-optimality backup of `q`, written independently of the
    /// value-iteration loop so tests can use it as a fixed-point oracle.
    pub fn bellman_backup(&self, q: &[Vec<T>], gamma: T) -> Vec<Vec<T>> {
        let mut out = vec![vec![T::zero(); self.n_actions]; self.n_states];
        for s in 0..self.n_states {
            for a in 0..self.n_actions {
                let mut acc = T::zero();
                for s2 in 0..self.n_states {
                    let p = self.p[self.idx(s, a, s2)];
                    if p == T::zero() {
                        continue;
                    }
                    let boot = if self.terminal[s2] {
                        T::zero()
                    } else {
                        q[s2].iter().cloned().fold(T::neg_infinity(), T::max)
                    };
                    acc += p * (self.r[self.idx(s, a, s2)] + gamma * boot);
                }
                out[s][a] = acc;
            }
        }
        out
    }

    /// Samples a next state and reward (for test rollouts).
    pub fn sample_step<R: Rng>(&self, s: usize, a: usize, rng: &mut R) -> (usize, T) {
        let u = real::<T>(rng.gen::<f64>());
        let mut acc = T::zero();
        let mut next = self.n_states - 1;
        for s2 in 0..self.n_states {
            acc += self.p[self.idx(s, a, s2)];
            if u < acc {
                next = s2;
                break;
            }
        }
        (next, self.r[self.idx(s, a, next)])
    }

    /// Text export. Line 1: `<n_states> <n_actions>`. Then one line per
    /// (s, a) in row-major order with the `n_states` entries of P, the same
    /// for R, one line for d0, and one line of 0/1 terminal markers.
    pub fn to_text(&self) -> String {
        let mut out = format!("{} {}\n", self.n_states, self.n_actions);
        let fmt_row = |row: &[T]| {
            row.iter()
                .map(|x| format!("{:?}", x.to_f64().unwrap()))
                .collect::<Vec<_>>()
                .join(" ")
        };
        for s in 0..self.n_states {
            for a in 0..self.n_actions {
                let base = self.idx(s, a, 0);
                out.push_str(&fmt_row(&self.p[base..base + self.n_states]));
                out.push('\n');
            }
        }
        for s in 0..self.n_states {
            for a in 0..self.n_actions {
                let base = self.idx(s, a, 0);
                out.push_str(&fmt_row(&self.r[base..base + self.n_states]));
                out.push('\n');
            }
        }
        out.push_str(&fmt_row(&self.d0));
        out.push('\n');
        out.push_str(
            &self
                .terminal
                .iter()
                .map(|&t| if t { "1" } else { "0" })
                .collect::<Vec<_>>()
                .join(" "),
        );
        out.push('\n');
        out
    }

    pub fn from_text(text: &str) -> Result<Mdp<T>> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines
            .next()
            .ok_or_else(|| Error::Validation("empty MDP text".into()))?;
        let mut it = header.split_whitespace();
        let n_states: usize = it
            .next()
            .and_then(|x| x.parse().ok())
            .ok_or_else(|| Error::Validation("bad header".into()))?;
        let n_actions: usize = it
            .next()
            .and_then(|x| x.parse().ok())
            .ok_or_else(|| Error::Validation("bad header".into()))?;
        let mut parse_row = |what: &str| -> Result<Vec<T>> {
            let line = lines
                .next()
                .ok_or_else(|| Error::Validation(format!("missing {what} row")))?;
            line.split_whitespace()
                .map(|x| {
                    x.parse::<f64>()
                        .map(real::<T>)
                        .map_err(|_| Error::Validation(format!("bad number in {what} row")))
                })
                .collect()
        };
        let mut p = Vec::with_capacity(n_states * n_actions * n_states);
        for s in 0..n_states {
            for a in 0..n_actions {
                let row = parse_row(&format!("P[{s}][{a}]"))?;
                if row.len() != n_states {
                    return Err(Error::Validation("short P row".into()));
                }
                p.extend(row);
            }
        }
        let mut r = Vec::with_capacity(p.len());
        for s in 0..n_states {
            for a in 0..n_actions {
                let row = parse_row(&format!("R[{s}][{a}]"))?;
                if row.len() != n_states {
                    return Err(Error::Validation("short R row".into()));
                }
                r.extend(row);
            }
        }
        let d0 = parse_row("d0")?;
        let term_line = lines
            .next()
            .ok_or_else(|| Error::Validation("missing terminal row".into()))?;
        let terminal: Vec<bool> = term_line
            .split_whitespace()
            .map(|x| x == "1")
            .collect();
        let mdp = Mdp {
            n_states,
            n_actions,
            p,
            r,
            d0,
            terminal,
        };
        mdp.validate()?;
        Ok(mdp)
    }
}

/// Exact value iteration to the Bellman-optimality fixed point.
///
/// Stops once the successive-iterate gap guarantees a max-norm distance to
/// Q* below `tol` (gap * gamma / (1 - gamma) bound).
pub fn value_iteration<T: Real>(mdp: &Mdp<T>, gamma: T, tol: T) -> Result<Vec<Vec<T>>> {
    if tol <= T::zero() {
        return Err(Error::Validation("tol must be positive".into()));
    }
    if gamma < T::zero() || gamma >= T::one() {
        return Err(Error::Validation("gamma must lie in [0, 1)".into()));
    }
    mdp.validate()?;
    let stop = if gamma == T::zero() {
        tol
    } else {
        tol * (T::one() - gamma) / gamma
    };
    let mut q = vec![vec![T::zero(); mdp.n_actions]; mdp.n_states];
    for _ in 0..5_000_000u64 {
        let next = mdp.bellman_backup(&q, gamma);
        let mut delta = T::zero();
        for s in 0..mdp.n_states {
            for a in 0..mdp.n_actions {
                delta = delta.max((next[s][a] - q[s][a]).abs());
            }
        }
        q = next;
        if delta <= stop {
            return Ok(q);
        }
    }
    Err(Error::Validation(
        "value iteration failed to converge within the iteration cap".into(),
    ))
}

/// Random MDP generator used by tests and benchmarks. With
/// `deterministic_dynamics` each (s, a) has a single successor.
pub fn random_mdp<T: Real, R: Rng>(
    n_states: usize,
    n_actions: usize,
    deterministic_dynamics: bool,
    rng: &mut R,
) -> Mdp<T> {
    let mut p = vec![T::zero(); n_states * n_actions * n_states];
    let mut r = vec![T::zero(); n_states * n_actions * n_states];
    for s in 0..n_states {
        for a in 0..n_actions {
            let base = (s * n_actions + a) * n_states;
            if deterministic_dynamics {
                let s2 = rng.gen_range(0..n_states);
                p[base + s2] = T::one();
                r[base + s2] = real::<T>(rng.gen::<f64>() * 2.0 - 1.0);
            } else {
                let mut weights: Vec<f64> = (0..n_states).map(|_| rng.gen::<f64>()).collect();
                let total: f64 = weights.iter().sum();
                for w in weights.iter_mut() {
                    *w /= total;
                }
                // renormalize exactly so validation's 1e-12 row check holds
                let sum_except_last: f64 = weights[..n_states - 1].iter().sum();
                weights[n_states - 1] = 1.0 - sum_except_last;
                for s2 in 0..n_states {
                    p[base + s2] = real::<T>(weights[s2]);
                    r[base + s2] = real::<T>(rng.gen::<f64>() * 2.0 - 1.0);
                }
            }
        }
    }
    let mut d0 = vec![T::zero(); n_states];
    d0[0] = T::one();
    Mdp {
        n_states,
        n_actions,
        p,
        r,
        d0,
        terminal: vec![false; n_states],
    }
}
