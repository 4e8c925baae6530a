//! Graph earth mover's distance between two node sets.
//!
//! The cost between node `i` of one view and node `j` of the other is the
//! cosine dissimilarity of their embeddings, scaled by a sigmoid of their hop
//! distance in the full graph. Transport mass comes from clamped dot products
//! with the other view's mean embedding, and the plan is found by a few
//! Sinkhorn rounds. The plan is treated as a constant when differentiating
//! unless [`GemdConfig::unrolled`] is set.

use std::rc::Rc;

use ndarray::{Array1, Array2, ArrayView2, Axis};

use crate::autodiff::{Tape, Var, NORM_EPS};
use crate::error::{Result, RosaError};

/// Largest problem accepted by [`exact_emd_oracle`].
pub const ORACLE_MAX: usize = 6;

#[derive(Debug, Clone, PartialEq)]
pub struct GemdConfig {
    pub lambda: f64,
    pub iters: usize,
    pub tau_sig: f64,
    /// Apply the hop-distance rescale. Off for the no-td ablation.
    pub rescale: bool,
    /// Differentiate through the Sinkhorn rounds instead of freezing the plan.
    pub unrolled: bool,
}

impl Default for GemdConfig {
    fn default() -> Self {
        GemdConfig {
            lambda: 20.0,
            iters: 5,
            tau_sig: 2.0,
            rescale: true,
            unrolled: false,
        }
    }
}

impl GemdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0) || !self.lambda.is_finite() {
            return Err(RosaError::Config(format!("lambda must be positive, got {}", self.lambda)));
        }
        if self.iters == 0 {
            return Err(RosaError::Config("sinkhorn iters must be at least 1".into()));
        }
        if !(self.tau_sig >= 1.0) {
            return Err(RosaError::Config(format!("tau_sig must be >= 1, got {}", self.tau_sig)));
        }
        Ok(())
    }

    /// Rescale factors for a hop matrix, or all ones when rescaling is off.
    pub fn scale_for(&self, psi: &Array2<f64>) -> Result<Array2<f64>> {
        if self.rescale {
            topology_rescale(psi, self.tau_sig)
        } else {
            Ok(Array2::ones(psi.dim()))
        }
    }
}

/// A balanced transport problem. The effective cost is `cost ⊙ scale`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportProblem {
    pub cost: Array2<f64>,
    pub scale: Array2<f64>,
    pub t: Array1<f64>,
    pub r: Array1<f64>,
    pub lambda: f64,
    pub iters: usize,
}

impl TransportProblem {
    /// Problem with no rescale.
    pub fn new(cost: Array2<f64>, t: Array1<f64>, r: Array1<f64>, lambda: f64, iters: usize) -> Result<Self> {
        let scale = Array2::ones(cost.dim());
        let p = TransportProblem {
            cost,
            scale,
            t,
            r,
            lambda,
            iters,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let (m, n) = self.cost.dim();
        if m == 0 || n == 0 || self.scale.dim() != (m, n) || self.t.len() != m || self.r.len() != n {
            return Err(RosaError::shape(
                "transport problem",
                format!("cost {:?}, scale {:?}, t {}, r {}", self.cost.dim(), self.scale.dim(), self.t.len(), self.r.len()),
            ));
        }
        if !(self.lambda > 0.0) || self.iters == 0 {
            return Err(RosaError::Config("sinkhorn needs lambda > 0 and iters >= 1".into()));
        }
        if self.t.iter().chain(&self.r).any(|&w| !(w >= 0.0)) {
            return Err(RosaError::Config("marginal weights must be non-negative".into()));
        }
        Ok(())
    }

    pub fn effective_cost(&self) -> Array2<f64> {
        &self.cost * &self.scale
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan {
    pub gamma: Array2<f64>,
    pub value: f64,
    /// `‖Γ1 − t‖₁` after each round.
    pub row_violation: Vec<f64>,
}

impl TransportPlan {
    pub fn col_violation(&self, r: &Array1<f64>) -> f64 {
        (&self.gamma.sum_axis(Axis(0)) - r).mapv(f64::abs).sum()
    }
}

/// `D_ij = 1 − cos(x_i, y_j)`, with row norms clamped below at 1e-12.
pub fn cost_matrix(x: &Array2<f64>, y: &Array2<f64>) -> Result<Array2<f64>> {
    if x.ncols() != y.ncols() {
        return Err(RosaError::shape("cost_matrix", format!("{:?} vs {:?}", x.dim(), y.dim())));
    }
    let (xn, yn) = (unit_rows(x), unit_rows(y));
    Ok(xn.dot(&yn.t()).mapv(|c| 1.0 - c))
}

fn unit_rows(x: &Array2<f64>) -> Array2<f64> {
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        let n = row.dot(&row).sqrt().max(NORM_EPS);
        row.mapv_inplace(|v| v / n);
    }
    out
}

/// `S_ij = 1 / (1 + exp(−Ψ_ij / τ))`.
pub fn topology_rescale(psi: &Array2<f64>, tau_sig: f64) -> Result<Array2<f64>> {
    if !(tau_sig >= 1.0) {
        return Err(RosaError::Config(format!("tau_sig must be >= 1, got {tau_sig}")));
    }
    Ok(psi.mapv(|p| 1.0 / (1.0 + (-p / tau_sig).exp())))
}

pub fn rectify_cost(d: &Array2<f64>, s: &Array2<f64>) -> Result<Array2<f64>> {
    if d.dim() != s.dim() {
        return Err(RosaError::shape("rectify_cost", format!("{:?} vs {:?}", d.dim(), s.dim())));
    }
    Ok(d * s)
}

/// Clamps at zero and normalizes to unit sum; an all-zero vector becomes uniform.
fn normalize_weights(raw: Array1<f64>) -> Array1<f64> {
    let clamped = raw.mapv(|w| w.max(0.0));
    let total = clamped.sum();
    if total > 0.0 && total.is_finite() {
        clamped / total
    } else {
        Array1::from_elem(clamped.len(), 1.0 / clamped.len() as f64)
    }
}

/// Node weights from a raw inner-product matrix `G = X Yᵀ`:
/// `t_i ∝ max(mean_j G_ij, 0)`, `r_j ∝ max(mean_i G_ij, 0)`.
pub fn node_weights_from_gram(gram: ArrayView2<f64>) -> (Array1<f64>, Array1<f64>) {
    let t = gram.mean_axis(Axis(1)).expect("non-empty gram");
    let r = gram.mean_axis(Axis(0)).expect("non-empty gram");
    (normalize_weights(t), normalize_weights(r))
}

/// `t_i ∝ max(x_i · mean(Y), 0)` and `r_j ∝ max(y_j · mean(X), 0)`.
pub fn node_weights(x: &Array2<f64>, y: &Array2<f64>) -> Result<(Array1<f64>, Array1<f64>)> {
    if x.ncols() != y.ncols() || x.nrows() == 0 || y.nrows() == 0 {
        return Err(RosaError::shape("node_weights", format!("{:?} vs {:?}", x.dim(), y.dim())));
    }
    let my = y.mean_axis(Axis(0)).expect("non-empty");
    let mx = x.mean_axis(Axis(0)).expect("non-empty");
    Ok((normalize_weights(x.dot(&my)), normalize_weights(y.dot(&mx))))
}

/// Sinkhorn scaling on an effective cost. Returns the plan and the per-round row violation.
pub fn sinkhorn_plan(cost: ArrayView2<f64>, t: &Array1<f64>, r: &Array1<f64>, lambda: f64, iters: usize) -> Result<(Array2<f64>, Vec<f64>)> {
    let (m, n) = cost.dim();
    let p = cost.mapv(|c| (-lambda * c).exp());
    let mut u = Array1::<f64>::ones(n);
    let mut v = Array1::<f64>::ones(m);
    let mut trace = Vec::with_capacity(iters);
    for iteration in 0..iters {
        let pu = p.dot(&u);
        for i in 0..m {
            if !(pu[i] > 0.0) {
                return Err(RosaError::SinkhornBreakdown { iteration });
            }
            v[i] = t[i] / pu[i];
        }
        let ptv = p.t().dot(&v);
        for j in 0..n {
            if !(ptv[j] > 0.0) {
                return Err(RosaError::SinkhornBreakdown { iteration });
            }
            u[j] = r[j] / ptv[j];
        }
        // Row sums of diag(v) P diag(u) are v ⊙ (P u).
        let rows = &v * &p.dot(&u);
        trace.push((&rows - t).mapv(f64::abs).sum());
    }
    let gamma = Array2::from_shape_fn((m, n), |(i, j)| v[i] * p[[i, j]] * u[j]);
    if gamma.iter().any(|g| !g.is_finite()) {
        return Err(RosaError::NonFinite { op: "sinkhorn" });
    }
    Ok((gamma, trace))
}

pub fn sinkhorn(problem: &TransportProblem) -> Result<TransportPlan> {
    problem.validate()?;
    let cost = problem.effective_cost();
    let (gamma, row_violation) = sinkhorn_plan(cost.view(), &problem.t, &problem.r, problem.lambda, problem.iters)?;
    let value = (&gamma * &cost).sum();
    Ok(TransportPlan {
        gamma,
        value,
        row_violation,
    })
}

/// Exact optimum of the unregularized transport problem by successive
/// shortest paths on the bipartite flow network.
pub fn exact_emd_oracle(cost: &Array2<f64>, t: &Array1<f64>, r: &Array1<f64>) -> Result<f64> {
    Ok(exact_emd_plan(cost, t, r)?.1)
}

/// Optimal plan and value; see [`exact_emd_oracle`].
pub fn exact_emd_plan(cost: &Array2<f64>, t: &Array1<f64>, r: &Array1<f64>) -> Result<(Array2<f64>, f64)> {
    let (m, n) = cost.dim();
    if m > ORACLE_MAX || n > ORACLE_MAX {
        return Err(RosaError::ProblemTooLarge {
            rows: m,
            cols: n,
            max: ORACLE_MAX,
        });
    }
    if m == 0 || n == 0 || t.len() != m || r.len() != n {
        return Err(RosaError::shape("exact_emd_oracle", format!("cost {:?}, t {}, r {}", cost.dim(), t.len(), r.len())));
    }
    let total = t.sum();
    if (total - r.sum()).abs() > 1e-9 * total.max(1.0) || t.iter().chain(r).any(|&w| w < 0.0) {
        return Err(RosaError::Config("oracle marginals must be non-negative with equal sums".into()));
    }

    // Node layout: 0 source, 1..=m senders, m+1..=m+n receivers, m+n+1 sink.
    let sink = m + n + 1;
    let mut edges: Vec<FlowEdge> = Vec::new();
    let mut add = |from: usize, to: usize, cap: f64, cost: f64| {
        edges.push(FlowEdge { from, to, cap, cost });
        edges.push(FlowEdge {
            from: to,
            to: from,
            cap: 0.0,
            cost: -cost,
        });
    };
    for i in 0..m {
        add(0, 1 + i, t[i], 0.0);
    }
    for i in 0..m {
        for j in 0..n {
            add(1 + i, 1 + m + j, f64::INFINITY, cost[[i, j]]);
        }
    }
    for j in 0..n {
        add(1 + m + j, sink, r[j], 0.0);
    }

    let tol = 1e-15 * total.max(1.0);
    let mut sent = 0.0;
    for _ in 0..10_000 {
        if total - sent <= tol {
            break;
        }
        let Some(path) = shortest_path(&edges, sink + 1, 0, sink, tol) else {
            break;
        };
        let push = path.iter().map(|&e| edges[e].cap).fold(total - sent, f64::min);
        for &e in &path {
            edges[e].cap -= push;
            edges[e ^ 1].cap += push;
        }
        sent += push;
    }
    if total - sent > 1e-12 * total.max(1.0) {
        return Err(RosaError::NonFinite { op: "exact_emd_oracle" });
    }

    let mut plan = Array2::zeros((m, n));
    let mut value = 0.0;
    for i in 0..m {
        for j in 0..n {
            // Reverse edge capacity equals the flow carried.
            let e = 2 * (m + i * n + j) + 1;
            let f = edges[e].cap;
            plan[[i, j]] = f;
            value += f * cost[[i, j]];
        }
    }
    Ok((plan, value))
}

#[derive(Debug, Clone)]
struct FlowEdge {
    from: usize,
    to: usize,
    cap: f64,
    cost: f64,
}

/// Bellman-Ford over residual edges with capacity above `tol`; returns edge ids along the path.
fn shortest_path(edges: &[FlowEdge], nodes: usize, src: usize, dst: usize, tol: f64) -> Option<Vec<usize>> {
    let mut dist = vec![f64::INFINITY; nodes];
    let mut via = vec![usize::MAX; nodes];
    dist[src] = 0.0;
    for _ in 0..nodes {
        let mut changed = false;
        for (k, e) in edges.iter().enumerate() {
            if e.cap > tol && dist[e.from].is_finite() && dist[e.from] + e.cost < dist[e.to] - 1e-14 {
                dist[e.to] = dist[e.from] + e.cost;
                via[e.to] = k;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    if !dist[dst].is_finite() {
        return None;
    }
    let mut path = Vec::new();
    let mut at = dst;
    while at != src {
        let e = via[at];
        path.push(e);
        at = edges[e].from;
        if path.len() > nodes {
            return None;
        }
    }
    Some(path)
}

/// Full value-level g-EMD with its plan, cost and weights, for inspection.
#[derive(Debug, Clone, PartialEq)]
pub struct GemdReport {
    /// Cosine cost before rescale.
    pub cost: Array2<f64>,
    pub scale: Array2<f64>,
    pub t: Array1<f64>,
    pub r: Array1<f64>,
    pub plan: TransportPlan,
}

pub fn g_emd_report(zx: &Array2<f64>, zy: &Array2<f64>, psi: &Array2<f64>, cfg: &GemdConfig) -> Result<GemdReport> {
    cfg.validate()?;
    if psi.dim() != (zx.nrows(), zy.nrows()) {
        return Err(RosaError::shape("g_emd", format!("hop matrix {:?} for {}x{} nodes", psi.dim(), zx.nrows(), zy.nrows())));
    }
    let cost = cost_matrix(zx, zy)?;
    let scale = cfg.scale_for(psi)?;
    let (t, r) = node_weights(zx, zy)?;
    let problem = TransportProblem {
        cost: cost.clone(),
        scale: scale.clone(),
        t: t.clone(),
        r: r.clone(),
        lambda: cfg.lambda,
        iters: cfg.iters,
    };
    let plan = sinkhorn(&problem)?;
    Ok(GemdReport { cost, scale, t, r, plan })
}

pub fn g_emd(zx: &Array2<f64>, zy: &Array2<f64>, psi: &Array2<f64>, cfg: &GemdConfig) -> Result<f64> {
    Ok(g_emd_report(zx, zy, psi, cfg)?.plan.value)
}

pub fn emd_similarity(zx: &Array2<f64>, zy: &Array2<f64>, psi: &Array2<f64>, cfg: &GemdConfig) -> Result<f64> {
    Ok(1.0 - g_emd(zx, zy, psi, cfg)?)
}

/// Rectified cost `(1 − cos) ⊙ S` on the tape.
fn cost_var(tape: &mut Tape, zx: Var, zy: Var, scale: Rc<Array2<f64>>) -> Result<Var> {
    let xn = tape.row_l2_normalize(zx);
    let yn = tape.row_l2_normalize(zy);
    let cos = tape.matmul_t(xn, yn)?;
    let d = tape.affine(cos, -1.0, 1.0);
    tape.mul_const(d, scale)
}

/// Sinkhorn rounds recorded as tape operations; returns Γ.
fn sinkhorn_var(tape: &mut Tape, cost: Var, t: &Array1<f64>, r: &Array1<f64>, cfg: &GemdConfig) -> Result<Var> {
    let (m, n) = tape.shape(cost);
    let neg = tape.scale(cost, -cfg.lambda);
    let p = tape.exp(neg);
    let pt = tape.transpose(p);
    let tv = tape.constant(t.clone().into_shape_with_order((m, 1)).expect("length m"));
    let rv = tape.constant(r.clone().into_shape_with_order((n, 1)).expect("length n"));
    let mut u = tape.constant(Array2::ones((n, 1)));
    let mut v = tape.constant(Array2::ones((m, 1)));
    for iteration in 0..cfg.iters {
        let pu = tape.matmul(p, u)?;
        if tape.value(pu).iter().any(|&x| !(x > 0.0)) {
            return Err(RosaError::SinkhornBreakdown { iteration });
        }
        v = tape.div(tv, pu)?;
        let ptv = tape.matmul(pt, v)?;
        if tape.value(ptv).iter().any(|&x| !(x > 0.0)) {
            return Err(RosaError::SinkhornBreakdown { iteration });
        }
        u = tape.div(rv, ptv)?;
    }
    let ut = tape.transpose(u);
    let left = tape.mul(p, v)?;
    tape.mul(left, ut)
}

/// g-EMD on the tape. Gradients reach `zx` and `zy` through the cost; the plan
/// is a constant unless `cfg.unrolled`.
pub fn g_emd_var(tape: &mut Tape, zx: Var, zy: Var, psi: &Array2<f64>, cfg: &GemdConfig) -> Result<Var> {
    cfg.validate()?;
    let (m, n) = (tape.shape(zx).0, tape.shape(zy).0);
    if psi.dim() != (m, n) {
        return Err(RosaError::shape("g_emd", format!("hop matrix {:?} for {m}x{n} nodes", psi.dim())));
    }
    let scale = Rc::new(cfg.scale_for(psi)?);
    let cost = cost_var(tape, zx, zy, scale)?;
    let (t, r) = node_weights(tape.value(zx), tape.value(zy))?;
    let gamma = if cfg.unrolled {
        sinkhorn_var(tape, cost, &t, &r, cfg)?
    } else {
        let (g, _) = sinkhorn_plan(tape.value(cost).view(), &t, &r, cfg.lambda, cfg.iters)?;
        tape.constant(g)
    };
    let weighted = tape.mul(cost, gamma)?;
    Ok(tape.sum(weighted))
}

/// Same as [`g_emd_var`] with a caller-supplied plan held constant.
pub fn g_emd_var_frozen(tape: &mut Tape, zx: Var, zy: Var, psi: &Array2<f64>, cfg: &GemdConfig, gamma: &Array2<f64>) -> Result<Var> {
    let scale = Rc::new(cfg.scale_for(psi)?);
    let cost = cost_var(tape, zx, zy, scale)?;
    let g = Rc::new(gamma.clone());
    let weighted = tape.mul_const(cost, g)?;
    Ok(tape.sum(weighted))
}

pub fn emd_similarity_var(tape: &mut Tape, zx: Var, zy: Var, psi: &Array2<f64>, cfg: &GemdConfig) -> Result<Var> {
    let d = g_emd_var(tape, zx, zy, psi, cfg)?;
    Ok(tape.affine(d, -1.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::finite_diff_check;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    #[test]
    fn cost_matrix_examples() {
        let d = cost_matrix(&array![[1.0, 0.0], [2.0, 0.0]], &array![[1.0, 1.0], [-3.0, 0.0]]).unwrap();
        assert_abs_diff_eq!(d[[0, 0]], 1.0 - 1.0 / 2f64.sqrt(), epsilon = 1e-12);
        assert_abs_diff_eq!(d[[1, 1]], 2.0, epsilon = 1e-12);
        let same = cost_matrix(&array![[0.3, -2.0]], &array![[0.3, -2.0]]).unwrap();
        assert_abs_diff_eq!(same[[0, 0]], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn cost_matrix_zero_row_is_finite() {
        let d = cost_matrix(&array![[0.0, 0.0]], &array![[1.0, 2.0]]).unwrap();
        assert_eq!(d[[0, 0]], 1.0);
    }

    #[test]
    fn rescale_examples() {
        let s = topology_rescale(&array![[0.0, 2.0, 100.0]], 2.0).unwrap();
        assert_eq!(s[[0, 0]], 0.5);
        assert_abs_diff_eq!(s[[0, 1]], 0.731_058_578_630_004_9, epsilon = 1e-12);
        assert_abs_diff_eq!(s[[0, 2]], 1.0, epsilon = 1e-12);
        assert!(topology_rescale(&array![[1.0]], 0.5).is_err());
    }

    #[test]
    fn rectify_examples() {
        assert_eq!(rectify_cost(&array![[1.0, 2.0]], &array![[0.5, 0.75]]).unwrap(), array![[0.5, 1.5]]);
        assert!(rectify_cost(&array![[1.0, 2.0]], &array![[0.5]]).is_err());
    }

    #[test]
    fn weights_examples() {
        let (t, r) = node_weights(&array![[3.0, -1.0]], &array![[0.2, 0.2]]).unwrap();
        assert_eq!((t[0], r[0]), (1.0, 1.0));
        let (t, r) = node_weights(&array![[1.0, 0.0], [0.0, 1.0]], &array![[1.0, 0.0]]).unwrap();
        assert_eq!(t, array![1.0, 0.0]);
        assert_eq!(r, array![1.0]);
        let (t, _) = node_weights(&array![[0.0, 1.0], [0.0, -2.0]], &array![[1.0, 0.0]]).unwrap();
        assert_eq!(t, array![0.5, 0.5]);
    }

    #[test]
    fn gram_weights_match_direct() {
        let x = array![[1.0, 2.0, -0.5], [0.3, -1.0, 2.0]];
        let y = array![[0.5, 0.5, 0.5], [-1.0, 2.0, 0.0], [0.0, 0.1, 0.9]];
        let direct = node_weights(&x, &y).unwrap();
        let via = node_weights_from_gram(x.dot(&y.t()).view());
        for (a, b) in direct.0.iter().chain(&direct.1).zip(via.0.iter().chain(&via.1)) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-14);
        }
    }

    #[test]
    fn sinkhorn_single_cell() {
        let p = TransportProblem::new(array![[0.7]], array![1.0], array![1.0], 20.0, 5).unwrap();
        let plan = sinkhorn(&p).unwrap();
        assert_abs_diff_eq!(plan.gamma[[0, 0]], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(plan.value, 0.7, epsilon = 1e-15);
    }

    #[test]
    fn sinkhorn_constant_cost_is_product_plan() {
        let t = array![0.2, 0.5, 0.3];
        let r = array![0.6, 0.4];
        let p = TransportProblem::new(Array2::from_elem((3, 2), 0.8), t.clone(), r.clone(), 20.0, 1).unwrap();
        let plan = sinkhorn(&p).unwrap();
        for i in 0..3 {
            for j in 0..2 {
                assert_abs_diff_eq!(plan.gamma[[i, j]], t[i] * r[j], epsilon = 1e-15);
            }
        }
        assert_abs_diff_eq!(plan.value, 0.8, epsilon = 1e-14);
    }

    #[test]
    fn sinkhorn_swap_cost_near_zero() {
        let p = TransportProblem::new(array![[0.0, 1.0], [1.0, 0.0]], array![0.5, 0.5], array![0.5, 0.5], 50.0, 50).unwrap();
        assert!(sinkhorn(&p).unwrap().value <= 0.02);
    }

    #[test]
    fn column_marginal_exact() {
        let cost = array![[0.1, 1.3, 0.4], [0.9, 0.2, 1.8]];
        let r = array![0.2, 0.3, 0.5];
        let p = TransportProblem::new(cost, array![0.7, 0.3], r.clone(), 20.0, 5).unwrap();
        let plan = sinkhorn(&p).unwrap();
        assert!(plan.col_violation(&r) < 1e-12);
        assert_eq!(plan.row_violation.len(), 5);
    }

    #[test]
    fn breakdown_is_reported() {
        let cost = array![[0.0, 40.0], [40.0, 40.0]];
        let p = TransportProblem::new(cost, array![0.5, 0.5], array![0.5, 0.5], 20.0, 3).unwrap();
        assert!(matches!(sinkhorn(&p), Err(RosaError::SinkhornBreakdown { .. })));
    }

    #[test]
    fn oracle_examples() {
        assert_abs_diff_eq!(exact_emd_oracle(&array![[0.4]], &array![1.0], &array![1.0]).unwrap(), 0.4, epsilon = 1e-15);
        let d = array![[0.0, 1.0, 2.0], [1.0, 0.0, 1.0], [2.0, 1.0, 0.0]];
        let u = Array1::from_elem(3, 1.0 / 3.0);
        assert_abs_diff_eq!(exact_emd_oracle(&d, &u, &u).unwrap(), 0.0, epsilon = 1e-15);
        // Moving 0.5 mass one step: t=(1,0,0)->r=(.5,.5,0).
        let v = exact_emd_oracle(&d, &array![1.0, 0.0, 0.0], &array![0.5, 0.5, 0.0]).unwrap();
        assert_abs_diff_eq!(v, 0.5, epsilon = 1e-14);
        assert!(matches!(
            exact_emd_oracle(&Array2::zeros((7, 2)), &Array1::zeros(7), &Array1::zeros(2)),
            Err(RosaError::ProblemTooLarge { .. })
        ));
    }

    #[test]
    fn oracle_plan_is_feasible() {
        let d = array![[0.3, 1.2, 0.1, 0.9], [1.5, 0.2, 0.7, 0.4], [0.6, 0.8, 1.9, 0.0]];
        let t = array![0.5, 0.3, 0.2];
        let r = array![0.1, 0.4, 0.25, 0.25];
        let (plan, value) = exact_emd_plan(&d, &t, &r).unwrap();
        assert!(plan.iter().all(|&g| g >= -1e-15));
        for (a, b) in plan.sum_axis(Axis(1)).iter().zip(&t) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
        for (a, b) in plan.sum_axis(Axis(0)).iter().zip(&r) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
        assert_abs_diff_eq!(value, (&plan * &d).sum(), epsilon = 1e-12);
    }

    #[test]
    fn similarity_antipodal_single_node() {
        let s = emd_similarity(&array![[1.0, -2.0]], &array![[-1.0, 2.0]], &array![[0.0]], &GemdConfig::default()).unwrap();
        assert_abs_diff_eq!(s, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn identical_views_similarity_near_one() {
        let z = array![[1.0, 0.2, 0.0], [0.1, 1.0, 0.3], [0.0, 0.4, 1.0]];
        let psi = array![[0.0, 1.0, 2.0], [1.0, 0.0, 1.0], [2.0, 1.0, 0.0]];
        let cfg = GemdConfig {
            lambda: 50.0,
            ..Default::default()
        };
        assert!(emd_similarity(&z, &z, &psi, &cfg).unwrap() >= 0.98);
    }

    #[test]
    fn tape_value_matches_value_level() {
        let zx = array![[1.0, 0.5, -0.2], [0.3, 1.1, 0.4]];
        let zy = array![[0.7, -0.1, 0.9], [0.2, 0.8, 0.1], [1.0, 1.0, 1.0]];
        let psi = array![[0.0, 1.0, 2.0], [3.0, 1.0, 6.0]];
        for unrolled in [false, true] {
            let cfg = GemdConfig {
                unrolled,
                ..Default::default()
            };
            let mut tape = Tape::new();
            let (x, y) = (tape.param(zx.clone()), tape.param(zy.clone()));
            let v = g_emd_var(&mut tape, x, y, &psi, &cfg).unwrap();
            assert_abs_diff_eq!(tape.scalar(v), g_emd(&zx, &zy, &psi, &cfg).unwrap(), epsilon = 1e-14);
        }
    }

    #[test]
    fn unrolled_gradient_matches_finite_differences() {
        let zx = array![[1.0, 0.5, -0.2], [0.3, 1.1, 0.4]];
        let zy = array![[0.7, -0.1, 0.9], [0.2, 0.8, 0.1]];
        let psi = array![[0.0, 1.0], [2.0, 1.0]];
        let cfg = GemdConfig {
            unrolled: true,
            ..Default::default()
        };
        // The marginals are not recorded on the tape, so pin them at the base point.
        let err = finite_diff_check(
            |tape, x| {
                let y = tape.constant(zy.clone());
                let d = g_emd_var_weights_fixed(tape, x, y, &psi, &cfg, &zx, &zy)?;
                Ok(d)
            },
            &zx,
            1e-6,
        )
        .unwrap();
        assert!(err < 1e-6, "relative error {err}");
    }

    /// Unrolled g-EMD with marginals pinned to those of the base point.
    fn g_emd_var_weights_fixed(
        tape: &mut Tape,
        zx: Var,
        zy: Var,
        psi: &Array2<f64>,
        cfg: &GemdConfig,
        base_x: &Array2<f64>,
        base_y: &Array2<f64>,
    ) -> Result<Var> {
        let scale = Rc::new(cfg.scale_for(psi)?);
        let cost = cost_var(tape, zx, zy, scale)?;
        let (t, r) = node_weights(base_x, base_y)?;
        let gamma = sinkhorn_var(tape, cost, &t, &r, cfg)?;
        let weighted = tape.mul(cost, gamma)?;
        Ok(tape.sum(weighted))
    }

    #[test]
    fn detached_gradient_matches_frozen_plan_differences() {
        let zx = array![[1.0, 0.5, -0.2], [0.3, 1.1, 0.4], [0.2, 0.2, 1.5]];
        let zy = array![[0.7, -0.1, 0.9], [0.2, 0.8, 0.1]];
        let psi = array![[0.0, 1.0], [2.0, 1.0], [6.0, 3.0]];
        let cfg = GemdConfig::default();
        let gamma = g_emd_report(&zx, &zy, &psi, &cfg).unwrap().plan.gamma;
        let err = finite_diff_check(
            |tape, x| {
                let y = tape.constant(zy.clone());
                g_emd_var_frozen(tape, x, y, &psi, &cfg, &gamma)
            },
            &zx,
            1e-6,
        )
        .unwrap();
        assert!(err < 1e-6, "relative error {err}");
        // The frozen-plan gradient is what the detached path produces at the base point.
        let mut tape = Tape::new();
        let x = tape.param(zx.clone());
        let y = tape.constant(zy.clone());
        let d = g_emd_var(&mut tape, x, y, &psi, &cfg).unwrap();
        let g1 = tape.backward(d).unwrap().take(x).unwrap();
        let mut tape = Tape::new();
        let x = tape.param(zx.clone());
        let y = tape.constant(zy.clone());
        let d = g_emd_var_frozen(&mut tape, x, y, &psi, &cfg, &gamma).unwrap();
        let g2 = tape.backward(d).unwrap().take(x).unwrap();
        assert_eq!(g1, g2);
    }
}
