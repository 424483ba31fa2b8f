//! NLP view of the AC-OPF: variable layout, bounds, constraint evaluation,
//! derivatives and KKT assembly.

use crate::acopf::{flow_derivatives, FlowDerivs, Instance};
use crate::grid::Network;
use crate::linalg::{reverse_cuthill_mckee, EnvelopeMatrix};

/// One rated branch end, `pf² + qf² − s̄² ≤ 0`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ThermalRow {
    pub branch: usize,
    /// 0 = from→to, 1 = to→from.
    pub end: usize,
    pub s2: f64,
}

/// Evaluated first-order information at a primal point.
#[derive(Debug, Clone)]
pub(crate) struct Eval {
    pub grad_f: Vec<f64>,
    /// Balance residuals, `[P rows; Q rows]`.
    pub c: Vec<f64>,
    /// Jacobian of `c` as `(row, var, value)` triplets (duplicates summed).
    pub jac_c: Vec<(usize, usize, f64)>,
    pub h: Vec<f64>,
    /// Sparse gradient of each thermal row.
    pub jac_h: Vec<Vec<(usize, f64)>>,
}

#[derive(Debug)]
pub(crate) struct OpfModel<'a> {
    pub net: &'a Network,
    pub n: usize,
    pub m: usize,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    /// Variables with finite bounds (pg, qg, vm), in dual-layout order.
    pub bounded: Vec<usize>,
    pub va_idx: Vec<Option<usize>>,
    pub vm_idx: Vec<usize>,
    pub pg_idx: Vec<usize>,
    pub qg_idx: Vec<usize>,
    pub thermal: Vec<ThermalRow>,
    pub pd_bus: Vec<f64>,
    pub qd_bus: Vec<f64>,
    pub obj_scale: f64,
    /// KKT position of each primal variable and of each constraint row.
    pub pos_x: Vec<usize>,
    pub pos_c: Vec<usize>,
    template: EnvelopeMatrix<f64>,
}

/// Relative widening applied to every finite bound.
const BOUND_RELAX: f64 = 1e-8;

impl<'a> OpfModel<'a> {
    pub fn new(net: &'a Network, inst: &Instance) -> Self {
        let nb = net.n_bus();
        let ng = net.n_gen();
        let mut va_idx = vec![None; nb];
        let mut n = 0;
        for (i, slot) in va_idx.iter_mut().enumerate() {
            if i != net.slack_bus {
                *slot = Some(n);
                n += 1;
            }
        }
        let vm_idx: Vec<usize> = (n..n + nb).collect();
        n += nb;
        let pg_idx: Vec<usize> = (n..n + ng).collect();
        n += ng;
        let qg_idx: Vec<usize> = (n..n + ng).collect();
        n += ng;

        let relax = |v: f64, sign: f64| v + sign * BOUND_RELAX * v.abs().max(1.0);
        let mut lo = vec![f64::NEG_INFINITY; n];
        let mut hi = vec![f64::INFINITY; n];
        for (k, g) in net.generators.iter().enumerate() {
            lo[pg_idx[k]] = relax(g.pg_min, -1.0);
            hi[pg_idx[k]] = relax(g.pg_max, 1.0);
            lo[qg_idx[k]] = relax(g.qg_min, -1.0);
            hi[qg_idx[k]] = relax(g.qg_max, 1.0);
        }
        for (i, b) in net.buses.iter().enumerate() {
            lo[vm_idx[i]] = relax(b.v_min, -1.0);
            hi[vm_idx[i]] = relax(b.v_max, 1.0);
        }
        let bounded: Vec<usize> = pg_idx.iter().chain(&qg_idx).chain(&vm_idx).copied().collect();

        let thermal: Vec<ThermalRow> = net
            .branches
            .iter()
            .enumerate()
            .filter_map(|(k, br)| br.s_max.map(|s| (k, s)))
            .flat_map(|(k, s)| (0..2).map(move |end| ThermalRow { branch: k, end, s2: s * s }))
            .collect();

        let (pd_bus, qd_bus) = inst.bus_demand(net);

        let max_grad = net
            .generators
            .iter()
            .map(|g| g.cost.derivative(g.pg_max).abs().max(g.cost.derivative(g.pg_min).abs()))
            .fold(0.0f64, f64::max);
        let obj_scale = if max_grad > 100.0 { 100.0 / max_grad } else { 1.0 };

        let m = 2 * nb;
        let (pos_x, pos_c) = kkt_ordering(net, &va_idx, &vm_idx, &pg_idx, &qg_idx, n);
        let mut pattern: Vec<(usize, usize)> = Vec::new();
        for br in &net.branches {
            let vars = [va_idx[br.from], va_idx[br.to], Some(vm_idx[br.from]), Some(vm_idx[br.to])];
            let vars: Vec<usize> = vars.iter().flatten().map(|&v| pos_x[v]).collect();
            let rows = [br.from, br.to, nb + br.from, nb + br.to].map(|r| pos_c[r]);
            for &a in &vars {
                for &b in vars.iter().chain(&rows) {
                    pattern.push((a, b));
                }
            }
        }
        for (k, g) in net.generators.iter().enumerate() {
            pattern.push((pos_x[pg_idx[k]], pos_c[g.bus]));
            pattern.push((pos_x[qg_idx[k]], pos_c[nb + g.bus]));
        }
        let template = EnvelopeMatrix::with_pattern(n + m, pattern);

        Self {
            net,
            n,
            m,
            lo,
            hi,
            bounded,
            va_idx,
            vm_idx,
            pg_idx,
            qg_idx,
            thermal,
            pd_bus,
            qd_bus,
            obj_scale,
            pos_x,
            pos_c,
            template,
        }
    }

    #[inline]
    fn local_vars(&self, i: usize, j: usize) -> [Option<usize>; 4] {
        [self.va_idx[i], self.va_idx[j], Some(self.vm_idx[i]), Some(self.vm_idx[j])]
    }

    #[inline]
    fn angle(&self, x: &[f64], bus: usize) -> f64 {
        self.va_idx[bus].map_or(0.0, |k| x[k])
    }

    /// Directed end `e` of branch `k`: `(from bus, to bus, derivatives)`.
    fn end_derivs(&self, x: &[f64], k: usize, end: usize) -> (usize, usize, FlowDerivs, FlowDerivs) {
        let br = &self.net.branches[k];
        let (i, j) = if end == 0 { (br.from, br.to) } else { (br.to, br.from) };
        let vi = x[self.vm_idx[i]];
        let vj = x[self.vm_idx[j]];
        let dt = self.angle(x, i) - self.angle(x, j);
        let (p, q) = flow_derivatives(br.g, br.b, vi, vj, dt);
        (i, j, p, q)
    }

    pub fn eval(&self, x: &[f64]) -> Eval {
        let net = self.net;
        let nb = net.n_bus();
        let mut grad_f = vec![0.0; self.n];
        for (k, g) in net.generators.iter().enumerate() {
            let p = x[self.pg_idx[k]];
            grad_f[self.pg_idx[k]] = self.obj_scale * g.cost.derivative(p);
        }

        let mut c = vec![0.0; self.m];
        c[..nb].copy_from_slice(&self.pd_bus);
        c[nb..].copy_from_slice(&self.qd_bus);
        let mut jac_c = Vec::with_capacity(net.n_branch() * 16 + 2 * net.n_gen());
        for k in 0..net.n_branch() {
            for end in 0..2 {
                let (i, j, p, q) = self.end_derivs(x, k, end);
                c[i] += p.val;
                c[nb + i] += q.val;
                for (a, var) in self.local_vars(i, j).iter().enumerate() {
                    if let Some(v) = *var {
                        jac_c.push((i, v, p.grad[a]));
                        jac_c.push((nb + i, v, q.grad[a]));
                    }
                }
            }
        }
        for (k, g) in net.generators.iter().enumerate() {
            c[g.bus] -= x[self.pg_idx[k]];
            c[nb + g.bus] -= x[self.qg_idx[k]];
            jac_c.push((g.bus, self.pg_idx[k], -1.0));
            jac_c.push((nb + g.bus, self.qg_idx[k], -1.0));
        }

        let mut h = Vec::with_capacity(self.thermal.len());
        let mut jac_h = Vec::with_capacity(self.thermal.len());
        for t in &self.thermal {
            let (i, j, p, q) = self.end_derivs(x, t.branch, t.end);
            h.push(p.val * p.val + q.val * q.val - t.s2);
            let row = self
                .local_vars(i, j)
                .iter()
                .enumerate()
                .filter_map(|(a, v)| v.map(|v| (v, 2.0 * (p.val * p.grad[a] + q.val * q.grad[a]))))
                .collect();
            jac_h.push(row);
        }
        Eval { grad_f, c, jac_c, h, jac_h }
    }

    /// `∇f + J_cᵀλ + J_hᵀν`.
    pub fn lagrangian_grad(&self, ev: &Eval, lam: &[f64], nu: &[f64]) -> Vec<f64> {
        let mut g = ev.grad_f.clone();
        for &(r, v, val) in &ev.jac_c {
            g[v] += lam[r] * val;
        }
        for (row, &w) in ev.jac_h.iter().zip(nu) {
            for &(v, val) in row {
                g[v] += w * val;
            }
        }
        g
    }

    pub fn jac_h_times(&self, ev: &Eval, dx: &[f64]) -> Vec<f64> {
        ev.jac_h.iter().map(|row| row.iter().map(|&(v, val)| val * dx[v]).sum()).collect()
    }

    /// Assembles the condensed primal-dual matrix
    /// `[[H + J_hᵀ diag(w) J_h + diag(sigma), J_cᵀ], [J_c, 0]]` in KKT order.
    /// `w` = ν/s per thermal row, `sigma` = bound barrier diagonal per variable.
    pub fn assemble_kkt(
        &self,
        x: &[f64],
        ev: &Eval,
        lam: &[f64],
        nu: &[f64],
        w: &[f64],
        sigma: &[f64],
    ) -> EnvelopeMatrix<f64> {
        let net = self.net;
        let nb = net.n_bus();
        let mut k = self.template.clone();
        let px = &self.pos_x;

        for (g, gen) in net.generators.iter().enumerate() {
            let v = self.pg_idx[g];
            k.add(px[v], px[v], 2.0 * self.obj_scale * gen.cost.c2);
        }
        for (v, &s) in sigma.iter().enumerate() {
            if s != 0.0 {
                k.add(px[v], px[v], s);
            }
        }
        for br in 0..net.n_branch() {
            for end in 0..2 {
                let (i, j, p, q) = self.end_derivs(x, br, end);
                let vars = self.local_vars(i, j);
                let (lp, lq) = (lam[i], lam[nb + i]);
                for a in 0..4 {
                    let Some(va) = vars[a] else { continue };
                    for b in 0..=a {
                        let Some(vb) = vars[b] else { continue };
                        let val = lp * p.hess[a][b] + lq * q.hess[a][b];
                        if val != 0.0 {
                            add_sym(&mut k, px[va], px[vb], val);
                        }
                    }
                }
            }
        }
        for (t, row) in self.thermal.iter().zip(0..) {
            let (i, j, p, q) = self.end_derivs(x, t.branch, t.end);
            let vars = self.local_vars(i, j);
            let grad_h = &ev.jac_h[row];
            let (nu_t, w_t) = (nu[row], w[row]);
            for a in 0..4 {
                let Some(va) = vars[a] else { continue };
                for b in 0..=a {
                    let Some(vb) = vars[b] else { continue };
                    let hess_h = 2.0
                        * (p.grad[a] * p.grad[b] + p.val * p.hess[a][b] + q.grad[a] * q.grad[b] + q.val * q.hess[a][b]);
                    let val = nu_t * hess_h;
                    if val != 0.0 {
                        add_sym(&mut k, px[va], px[vb], val);
                    }
                }
            }
            for &(va, ga) in grad_h {
                for &(vb, gb) in grad_h {
                    if px[vb] <= px[va] {
                        k.add(px[va], px[vb], w_t * ga * gb);
                    }
                }
            }
        }
        for &(r, v, val) in &ev.jac_c {
            k.add(self.pos_c[r], px[v], val);
        }
        k
    }

    /// Scatter `[x-part; c-part]` into KKT order.
    pub fn to_kkt(&self, rx: &[f64], rc: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n + self.m];
        for (v, &val) in rx.iter().enumerate() {
            out[self.pos_x[v]] = val;
        }
        for (r, &val) in rc.iter().enumerate() {
            out[self.pos_c[r]] = val;
        }
        out
    }

    pub fn unpermute(&self, sol: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let dx = self.pos_x.iter().map(|&p| sol[p]).collect();
        let dl = self.pos_c.iter().map(|&p| sol[p]).collect();
        (dx, dl)
    }

    pub fn is_lambda_position(&self) -> Vec<bool> {
        let mut out = vec![false; self.n + self.m];
        for &p in &self.pos_c {
            out[p] = true;
        }
        out
    }
}

/// Adds `val` at `(a, b)` of a symmetric matrix, given one triangle visit per
/// unordered pair of local variables (diagonal visited once).
#[inline]
fn add_sym(k: &mut EnvelopeMatrix<f64>, a: usize, b: usize, val: f64) {
    k.add(a, b, val);
}

/// Bus-blocked ordering: buses in reverse Cuthill-McKee order, each block
/// holding that bus's variables followed by its two balance rows.
fn kkt_ordering(
    net: &Network,
    va_idx: &[Option<usize>],
    vm_idx: &[usize],
    pg_idx: &[usize],
    qg_idx: &[usize],
    n: usize,
) -> (Vec<usize>, Vec<usize>) {
    let nb = net.n_bus();
    let mut adj = vec![Vec::new(); nb];
    for br in &net.branches {
        if br.from != br.to {
            adj[br.from].push(br.to);
            adj[br.to].push(br.from);
        }
    }
    for a in adj.iter_mut() {
        a.sort_unstable();
        a.dedup();
    }
    let order = reverse_cuthill_mckee(&adj);
    let mut pos_x = vec![usize::MAX; n];
    let mut pos_c = vec![usize::MAX; 2 * nb];
    let mut next = 0;
    for &bus in &order {
        if let Some(v) = va_idx[bus] {
            pos_x[v] = next;
            next += 1;
        }
        pos_x[vm_idx[bus]] = next;
        next += 1;
        for &g in &net.gens_at_bus[bus] {
            pos_x[pg_idx[g]] = next;
            pos_x[qg_idx[g]] = next + 1;
            next += 2;
        }
        pos_c[bus] = next;
        pos_c[nb + bus] = next + 1;
        next += 2;
    }
    debug_assert_eq!(next, n + 2 * nb);
    (pos_x, pos_c)
}
