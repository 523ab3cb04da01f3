//! Reference solver for the Newton tests. Shares nothing with the library
//! beyond the case records: the admittance matrix is assembled here from
//! scratch, and the iteration is plain Gauss-Seidel.

use gridflow_core::grid_model::{BusKind, GridCase};
use num_complex::Complex64;

pub struct Oracle {
    pub ybus: Vec<Vec<Complex64>>,
    /// Shunt admittance seen from each bus: bus shunt plus every branch
    /// end's own shunt element.
    pub shunt_totals: Vec<Complex64>,
}

/// Element-by-element pi-model assembly.
pub fn assemble(case: &GridCase) -> Oracle {
    let n = case.buses.len();
    let idx = |id: usize| case.buses.iter().position(|b| b.id == id).unwrap();
    let mut y = vec![vec![Complex64::new(0.0, 0.0); n]; n];
    let mut shunt = vec![Complex64::new(0.0, 0.0); n];
    for (i, b) in case.buses.iter().enumerate() {
        let ysh = Complex64::new(b.g_shunt, b.b_shunt);
        y[i][i] += ysh;
        shunt[i] += ysh;
    }
    for br in &case.branches {
        let f = idx(br.from_bus);
        let t = idx(br.to_bus);
        let series = Complex64::new(1.0, 0.0) / Complex64::new(br.r, br.x);
        let half_b = Complex64::new(0.0, br.b_shunt / 2.0);
        let ratio = if br.tap_ratio == 0.0 { 1.0 } else { br.tap_ratio };
        let tap = Complex64::from_polar(ratio, br.shift);

        // two-port admittances of an ideal transformer in series with the line
        let y_ff = (series + half_b) / (ratio * ratio);
        let y_ft = -series / tap.conj();
        let y_tf = -series / tap;
        let y_tt = series + half_b;

        y[f][f] += y_ff;
        y[f][t] += y_ft;
        y[t][f] += y_tf;
        y[t][t] += y_tt;
        shunt[f] += y_ff + y_ft;
        shunt[t] += y_tt + y_tf;
    }
    Oracle { ybus: y, shunt_totals: shunt }
}

pub struct OracleSolution {
    pub v: Vec<Complex64>,
    pub converged: bool,
    pub sweeps: usize,
}

impl OracleSolution {
    pub fn magnitudes(&self) -> Vec<f64> {
        self.v.iter().map(|v| v.norm()).collect()
    }
}

/// Gauss-Seidel with PV reactive limits: a PV bus whose required reactive
/// output leaves its range is pinned at the limit and treated as PQ.
pub fn solve(case: &GridCase, tol: f64, max_sweeps: usize) -> OracleSolution {
    let n = case.buses.len();
    let y = assemble(case).ybus;

    let mut kind: Vec<BusKind> = case.buses.iter().map(|b| b.kind).collect();
    let mut p = vec![0.0; n];
    let mut q = vec![0.0; n];
    let mut vset = vec![1.0; n];
    let mut qlim = vec![(f64::NEG_INFINITY, f64::INFINITY); n];
    for (i, b) in case.buses.iter().enumerate() {
        p[i] = -b.p_load;
        q[i] = -b.q_load;
    }
    for g in case.generators.iter().filter(|g| g.online) {
        let i = case.buses.iter().position(|b| b.id == g.bus).unwrap();
        p[i] += g.p_gen;
        vset[i] = g.v_set;
        qlim[i] = (g.q_min - case.buses[i].q_load, g.q_max - case.buses[i].q_load);
    }
    for (k, bus) in kind.iter_mut().zip(&case.buses) {
        let has_gen = case.generators.iter().any(|g| g.online && g.bus == bus.id);
        if *k == BusKind::PV && !has_gen {
            *k = BusKind::PQ;
        }
    }

    let mut v: Vec<Complex64> = (0..n)
        .map(|i| Complex64::new(if kind[i] == BusKind::PQ { 1.0 } else { vset[i] }, 0.0))
        .collect();
    let mut switched = vec![false; n];

    for sweep in 1..=max_sweeps {
        let mut delta: f64 = 0.0;
        for i in 0..n {
            if kind[i] == BusKind::Slack {
                continue;
            }
            let sum: Complex64 = (0..n).filter(|&j| j != i).map(|j| y[i][j] * v[j]).sum();
            if kind[i] == BusKind::PV {
                let s_calc = v[i] * (y[i][i] * v[i] + sum).conj();
                q[i] = s_calc.im;
            }
            let s = Complex64::new(p[i], q[i]);
            let mut next = (s.conj() / v[i].conj() - sum) / y[i][i];
            if kind[i] == BusKind::PV {
                next = next * (vset[i] / next.norm());
            } else {
                // over-relaxation on load buses only
                next = v[i] + (next - v[i]) * 1.4;
            }
            delta = delta.max((next - v[i]).norm());
            v[i] = next;
        }
        if !v.iter().all(|x| x.re.is_finite() && x.im.is_finite()) {
            return OracleSolution { v, converged: false, sweeps: sweep };
        }
        if delta < tol {
            let mut any = false;
            for i in 0..n {
                if kind[i] == BusKind::PV && !switched[i] && (q[i] < qlim[i].0 || q[i] > qlim[i].1) {
                    q[i] = q[i].clamp(qlim[i].0, qlim[i].1);
                    kind[i] = BusKind::PQ;
                    switched[i] = true;
                    any = true;
                }
            }
            if !any {
                return OracleSolution { v, converged: true, sweeps: sweep };
            }
        }
    }
    OracleSolution { v, converged: false, sweeps: max_sweeps }
}
