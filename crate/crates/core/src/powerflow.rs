//! Nodal admittance assembly, Newton-Raphson AC power flow and the
//! post-solve constraint audit.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid_model::{BusKind, GridCase};
use crate::linalg::lu_solve;

pub const DEFAULT_TOL: f64 = 1e-8;
pub const DEFAULT_MAX_ITER: usize = 30;

#[derive(Debug, Error, PartialEq)]
pub enum PowerFlowError {
    #[error("branch {0} has zero series impedance")]
    SingularBranch(usize),
    #[error("solution did not converge")]
    NotConverged,
}

/// Dense complex bus admittance matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct AdmittanceMatrix {
    pub n: usize,
    pub entries: Vec<Complex64>,
}

impl AdmittanceMatrix {
    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        self.entries[i * self.n + j]
    }

    fn add(&mut self, i: usize, j: usize, v: Complex64) {
        self.entries[i * self.n + j] += v;
    }

    pub fn row_sum(&self, i: usize) -> Complex64 {
        self.entries[i * self.n..(i + 1) * self.n].iter().sum()
    }

    /// Current injections `I = Y V`.
    pub fn mul(&self, v: &[Complex64]) -> Vec<Complex64> {
        (0..self.n)
            .map(|i| {
                self.entries[i * self.n..(i + 1) * self.n]
                    .iter()
                    .zip(v)
                    .map(|(y, vk)| y * vk)
                    .sum()
            })
            .collect()
    }
}

/// Pi-model branch admittances `(y_ff, y_ft, y_tf, y_tt)` with the tap on the
/// from side.
pub(crate) fn branch_admittances(
    br: &crate::grid_model::BranchRecord,
) -> (Complex64, Complex64, Complex64, Complex64) {
    let ys = Complex64::new(1.0, 0.0) / Complex64::new(br.r, br.x);
    let charging = Complex64::new(0.0, br.b_shunt / 2.0);
    let tap = Complex64::from_polar(br.tap_ratio, br.shift);
    let ytt = ys + charging;
    let yff = ytt / (tap * tap.conj());
    let yft = -ys / tap.conj();
    let ytf = -ys / tap;
    (yff, yft, ytf, ytt)
}

pub fn build_ybus(case: &GridCase) -> Result<AdmittanceMatrix, PowerFlowError> {
    let n = case.n_buses();
    let mut y = AdmittanceMatrix {
        n,
        entries: vec![Complex64::new(0.0, 0.0); n * n],
    };
    for (k, br) in case.branches.iter().enumerate() {
        if br.r == 0.0 && br.x == 0.0 {
            return Err(PowerFlowError::SingularBranch(k + 1));
        }
        let f = case.bus_index(br.from_bus).expect("validated case");
        let t = case.bus_index(br.to_bus).expect("validated case");
        let (yff, yft, ytf, ytt) = branch_admittances(br);
        y.add(f, f, yff);
        y.add(f, t, yft);
        y.add(t, f, ytf);
        y.add(t, t, ytt);
    }
    for (i, b) in case.buses.iter().enumerate() {
        y.add(i, i, Complex64::new(b.g_shunt, b.b_shunt));
    }
    Ok(y)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerFlowSolution {
    pub v_mag: Vec<f64>,
    /// Radians.
    pub v_ang: Vec<f64>,
    pub p_inj: Vec<f64>,
    pub q_inj: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub max_mismatch: f64,
    /// Buses switched from PV to PQ at a reactive limit.
    pub q_limited: Vec<usize>,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum Role {
    Slack,
    Pv,
    Pq,
}

/// Newton-Raphson power flow from a flat start.
///
/// Divergence is not an error: the returned solution has `converged = false`.
pub fn solve(case: &GridCase, tol: f64, max_iter: usize) -> PowerFlowSolution {
    let n = case.n_buses();
    let ybus = match build_ybus(case) {
        Ok(y) => y,
        Err(_) => return failed(n, 0),
    };

    let mut role = vec![Role::Pq; n];
    let mut vm = vec![1.0; n];
    let va = vec![0.0; n];
    let mut p_sched = vec![0.0; n];
    let mut q_sched = vec![0.0; n];
    let mut q_limits = vec![None; n];

    for (i, b) in case.buses.iter().enumerate() {
        p_sched[i] = -b.p_load;
        q_sched[i] = -b.q_load;
        let gen = case.generator_at(b.id).filter(|g| g.online);
        if let Some(g) = gen {
            p_sched[i] += g.p_gen;
            match b.kind {
                BusKind::Slack => {
                    role[i] = Role::Slack;
                    vm[i] = g.v_set;
                }
                BusKind::PV => {
                    role[i] = Role::Pv;
                    vm[i] = g.v_set;
                    q_limits[i] = Some((g.q_min, g.q_max));
                }
                BusKind::PQ => {}
            }
        } else if b.kind == BusKind::Slack {
            return failed(n, 0);
        }
    }

    let mut va = va;
    let mut q_limited = Vec::new();
    let mut iterations = 0;
    let mut converged = false;

    let (mut s, mut mis) = mismatch(&ybus, &vm, &va, &role, &p_sched, &q_sched);
    loop {
        if !mis.is_finite() {
            break;
        }
        if mis <= tol {
            // reactive limits are checked once the current bus typing has converged
            let mut switched = false;
            for i in 0..n {
                if role[i] != Role::Pv {
                    continue;
                }
                let (qmin, qmax) = q_limits[i].expect("PV bus has limits");
                let q_gen = s[i].im + case.buses[i].q_load;
                let limit = if q_gen > qmax {
                    Some(qmax)
                } else if q_gen < qmin {
                    Some(qmin)
                } else {
                    None
                };
                if let Some(lim) = limit {
                    role[i] = Role::Pq;
                    q_sched[i] = lim - case.buses[i].q_load;
                    q_limited.push(case.buses[i].id);
                    switched = true;
                }
            }
            if !switched {
                converged = true;
                break;
            }
            (s, mis) = mismatch(&ybus, &vm, &va, &role, &p_sched, &q_sched);
            continue;
        }
        if iterations >= max_iter {
            break;
        }
        iterations += 1;
        if newton_step(&ybus, &mut vm, &mut va, &role, &p_sched, &q_sched).is_err() {
            break;
        }
        (s, mis) = mismatch(&ybus, &vm, &va, &role, &p_sched, &q_sched);
    }

    if converged && vm.iter().any(|&v| !(v > 0.0)) {
        converged = false;
    }

    PowerFlowSolution {
        p_inj: s.iter().map(|x| x.re).collect(),
        q_inj: s.iter().map(|x| x.im).collect(),
        v_mag: vm,
        v_ang: va,
        converged,
        iterations,
        max_mismatch: mis,
        q_limited,
    }
}

fn failed(n: usize, iterations: usize) -> PowerFlowSolution {
    PowerFlowSolution {
        v_mag: vec![f64::NAN; n],
        v_ang: vec![f64::NAN; n],
        p_inj: vec![f64::NAN; n],
        q_inj: vec![f64::NAN; n],
        converged: false,
        iterations,
        max_mismatch: f64::INFINITY,
        q_limited: Vec::new(),
    }
}

fn voltages(vm: &[f64], va: &[f64]) -> Vec<Complex64> {
    vm.iter()
        .zip(va)
        .map(|(&m, &a)| Complex64::from_polar(m, a))
        .collect()
}

/// Complex injections and the infinity norm of the mismatch vector.
fn mismatch(
    ybus: &AdmittanceMatrix,
    vm: &[f64],
    va: &[f64],
    role: &[Role],
    p_sched: &[f64],
    q_sched: &[f64],
) -> (Vec<Complex64>, f64) {
    let v = voltages(vm, va);
    let i = ybus.mul(&v);
    let s: Vec<Complex64> = v.iter().zip(&i).map(|(v, i)| v * i.conj()).collect();
    let mut worst: f64 = 0.0;
    for k in 0..s.len() {
        match role[k] {
            Role::Slack => {}
            Role::Pv => worst = worst.max((s[k].re - p_sched[k]).abs()),
            Role::Pq => {
                worst = worst
                    .max((s[k].re - p_sched[k]).abs())
                    .max((s[k].im - q_sched[k]).abs())
            }
        }
        if !s[k].re.is_finite() || !s[k].im.is_finite() {
            return (s, f64::NAN);
        }
    }
    (s, worst)
}

fn newton_step(
    ybus: &AdmittanceMatrix,
    vm: &mut [f64],
    va: &mut [f64],
    role: &[Role],
    p_sched: &[f64],
    q_sched: &[f64],
) -> Result<(), crate::linalg::Singular> {
    let n = vm.len();
    let pvpq: Vec<usize> = (0..n).filter(|&k| role[k] != Role::Slack).collect();
    let pq: Vec<usize> = (0..n).filter(|&k| role[k] == Role::Pq).collect();
    let (a, b) = (pvpq.len(), pq.len());
    let dim = a + b;

    let v = voltages(vm, va);
    let cur = ybus.mul(&v);
    let vnorm: Vec<Complex64> = v.iter().map(|x| x / x.norm()).collect();
    let j = Complex64::new(0.0, 1.0);

    // dS/dVa and dS/dVm, element-wise
    let ds_dva = |r: usize, c: usize| {
        let d = if r == c { cur[r] } else { Complex64::new(0.0, 0.0) };
        j * v[r] * (d - ybus.get(r, c) * v[c]).conj()
    };
    let ds_dvm = |r: usize, c: usize| {
        let d = if r == c {
            cur[r].conj() * vnorm[r]
        } else {
            Complex64::new(0.0, 0.0)
        };
        v[r] * (ybus.get(r, c) * vnorm[c]).conj() + d
    };

    let mut jac = vec![0.0; dim * dim];
    let mut rhs = vec![0.0; dim];
    for (ri, &r) in pvpq.iter().enumerate() {
        for (ci, &c) in pvpq.iter().enumerate() {
            jac[ri * dim + ci] = ds_dva(r, c).re;
        }
        for (ci, &c) in pq.iter().enumerate() {
            jac[ri * dim + a + ci] = ds_dvm(r, c).re;
        }
        let s = v[r] * cur[r].conj();
        rhs[ri] = -(s.re - p_sched[r]);
    }
    for (ri, &r) in pq.iter().enumerate() {
        let row = a + ri;
        for (ci, &c) in pvpq.iter().enumerate() {
            jac[row * dim + ci] = ds_dva(r, c).im;
        }
        for (ci, &c) in pq.iter().enumerate() {
            jac[row * dim + a + ci] = ds_dvm(r, c).im;
        }
        let s = v[r] * cur[r].conj();
        rhs[row] = -(s.im - q_sched[r]);
    }

    lu_solve(&mut jac, &mut rhs, dim)?;
    for (k, &r) in pvpq.iter().enumerate() {
        va[r] += rhs[k];
    }
    for (k, &r) in pq.iter().enumerate() {
        vm[r] += rhs[a + k];
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    /// Bus id (voltage) or generator bus id (reactive output).
    pub id: usize,
    pub value: f64,
    pub bound: f64,
}

/// Terminal flows of one branch, p.u.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchFlow {
    pub from_bus: usize,
    pub to_bus: usize,
    pub p_from: f64,
    pub q_from: f64,
    pub p_to: f64,
    pub q_to: f64,
    pub s_from: f64,
    pub s_to: f64,
    /// `|V_from| - |V_to|`.
    pub dv: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintReport {
    pub voltage_violations: Vec<Violation>,
    pub generator_q_violations: Vec<Violation>,
    pub balance_residual: f64,
    /// Reported only; line limits are not part of the voltage problem.
    pub branch_flows: Vec<BranchFlow>,
}

/// Checks a converged solution against the case's voltage bands and
/// generator reactive limits, and closes the power balance independently
/// through branch flows.
pub fn audit(case: &GridCase, sol: &PowerFlowSolution) -> Result<ConstraintReport, PowerFlowError> {
    if !sol.converged {
        return Err(PowerFlowError::NotConverged);
    }
    let v = voltages(&sol.v_mag, &sol.v_ang);

    let mut voltage_violations = Vec::new();
    for (i, b) in case.buses.iter().enumerate() {
        let vm = sol.v_mag[i];
        if vm > b.v_max {
            voltage_violations.push(Violation { id: b.id, value: vm, bound: b.v_max });
        } else if vm < b.v_min {
            voltage_violations.push(Violation { id: b.id, value: vm, bound: b.v_min });
        }
    }

    let mut generator_q_violations = Vec::new();
    let mut gen_total = Complex64::new(0.0, 0.0);
    let mut load_total = Complex64::new(0.0, 0.0);
    for (i, b) in case.buses.iter().enumerate() {
        load_total += Complex64::new(b.p_load, b.q_load);
        if let Some(g) = case.generator_at(b.id).filter(|g| g.online) {
            let sg = Complex64::new(sol.p_inj[i] + b.p_load, sol.q_inj[i] + b.q_load);
            gen_total += sg;
            // small slack for the solver tolerance at a clamped limit
            let eps = 1e-7;
            if sg.im > g.q_max + eps {
                generator_q_violations.push(Violation { id: g.bus, value: sg.im, bound: g.q_max });
            } else if sg.im < g.q_min - eps {
                generator_q_violations.push(Violation { id: g.bus, value: sg.im, bound: g.q_min });
            }
        }
    }

    let mut losses = Complex64::new(0.0, 0.0);
    let mut branch_flows = Vec::with_capacity(case.branches.len());
    for br in &case.branches {
        let f = case.bus_index(br.from_bus).expect("validated case");
        let t = case.bus_index(br.to_bus).expect("validated case");
        let (yff, yft, ytf, ytt) = branch_admittances(br);
        let i_f = yff * v[f] + yft * v[t];
        let i_t = ytf * v[f] + ytt * v[t];
        let s_f = v[f] * i_f.conj();
        let s_t = v[t] * i_t.conj();
        losses += s_f + s_t;
        branch_flows.push(BranchFlow {
            from_bus: br.from_bus,
            to_bus: br.to_bus,
            p_from: s_f.re,
            q_from: s_f.im,
            p_to: s_t.re,
            q_to: s_t.im,
            s_from: s_f.norm(),
            s_to: s_t.norm(),
            dv: sol.v_mag[f] - sol.v_mag[t],
        });
    }
    for (i, b) in case.buses.iter().enumerate() {
        let vm2 = sol.v_mag[i] * sol.v_mag[i];
        losses += Complex64::new(b.g_shunt * vm2, -b.b_shunt * vm2);
    }

    Ok(ConstraintReport {
        voltage_violations,
        generator_q_violations,
        balance_residual: (gen_total - load_total - losses).norm(),
        branch_flows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid_model::parse_case;

    fn two_bus(b_shunt: f64, q_load_mvar: f64) -> GridCase {
        parse_case(&format!(
            r#"{{
            "base_mva": 100.0,
            "buses": [
                {{"id": 1, "kind": "Slack", "p_load": 0, "q_load": 0, "v_min": 0.95, "v_max": 1.05}},
                {{"id": 2, "kind": "PQ", "p_load": 0, "q_load": {q_load_mvar}, "v_min": 0.95, "v_max": 1.05}}
            ],
            "branches": [{{"from_bus": 1, "to_bus": 2, "r": 0.0, "x": 0.1, "b_shunt": {b_shunt}}}],
            "generators": [{{"bus": 1, "v_set": 1.0, "p_gen": 0, "q_min": -50, "q_max": 50}}]
        }}"#
        ))
        .unwrap()
    }

    fn close(a: Complex64, re: f64, im: f64) -> bool {
        (a.re - re).abs() < 1e-12 && (a.im - im).abs() < 1e-12
    }

    #[test]
    fn ybus_single_reactance() {
        let y = build_ybus(&two_bus(0.0, 0.0)).unwrap();
        assert!(close(y.get(0, 0), 0.0, -10.0));
        assert!(close(y.get(0, 1), 0.0, 10.0));
        assert!(close(y.get(1, 0), 0.0, 10.0));
        assert!(close(y.get(1, 1), 0.0, -10.0));
    }

    #[test]
    fn ybus_half_charging_each_end() {
        let y = build_ybus(&two_bus(0.2, 0.0)).unwrap();
        assert!(close(y.get(0, 0), 0.0, -9.9));
        assert!(close(y.get(1, 1), 0.0, -9.9));
        assert!(close(y.get(0, 1), 0.0, 10.0));
    }

    #[test]
    fn zero_impedance_branch_is_singular() {
        let mut case = two_bus(0.0, 0.0);
        case.branches[0].x = 0.0;
        assert_eq!(build_ybus(&case), Err(PowerFlowError::SingularBranch(1)));
    }

    #[test]
    fn flat_two_bus_solution() {
        let sol = solve(&two_bus(0.0, 0.0), DEFAULT_TOL, DEFAULT_MAX_ITER);
        assert!(sol.converged);
        assert!(sol.iterations <= 2);
        assert_eq!(sol.v_mag, vec![1.0, 1.0]);
        assert_eq!(sol.v_ang, vec![0.0, 0.0]);
    }

    #[test]
    fn reactive_load_depresses_voltage() {
        // V2 solves V^2 - V + 0.1*0.5 = 0 with zero angle
        let sol = solve(&two_bus(0.0, 50.0), 1e-12, DEFAULT_MAX_ITER);
        assert!(sol.converged);
        let want = (1.0 + (1.0f64 - 4.0 * 0.05).sqrt()) / 2.0;
        assert!((sol.v_mag[1] - want).abs() < 1e-10);
    }

    #[test]
    fn audit_refuses_diverged() {
        let mut sol = solve(&two_bus(0.0, 0.0), DEFAULT_TOL, DEFAULT_MAX_ITER);
        sol.converged = false;
        assert_eq!(audit(&two_bus(0.0, 0.0), &sol), Err(PowerFlowError::NotConverged));
    }

    #[test]
    fn audit_flags_single_high_bus() {
        let case = two_bus(0.0, 0.0);
        let mut sol = solve(&case, DEFAULT_TOL, DEFAULT_MAX_ITER);
        sol.v_mag[1] = 1.07;
        let rep = audit(&case, &sol).unwrap();
        assert_eq!(rep.voltage_violations.len(), 1);
        assert_eq!(rep.voltage_violations[0].id, 2);
        assert_eq!(rep.voltage_violations[0].bound, 1.05);
    }

    #[test]
    fn nan_setpoints_do_not_converge() {
        let mut case = two_bus(0.0, 0.0);
        case.generators[0].v_set = f64::NAN;
        assert!(!solve(&case, DEFAULT_TOL, DEFAULT_MAX_ITER).converged);
    }
}
